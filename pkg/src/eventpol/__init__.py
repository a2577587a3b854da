"""Event-based dual-rotating-retarder ellipsometry.

Forward simulation of polarimetrically modulated intensity and event
streams, sensor calibration, robust per-pixel Mueller-matrix video
reconstruction with spatio-temporal propagation, and physical decomposition
of the result.

Submodules are imported lazily so that lightweight tooling (like the
command line entry point) can configure the process before numpy loads.
"""

from importlib import import_module

__version__ = "0.1.0"

# Public name -> defining submodule.
_EXPORTS = {
    # polarization algebra
    "DecompositionError": "mueller",
    "DecompositionMaps": "mueller",
    "cloude_filter": "mueller",
    "coherency_eigenvalues": "mueller",
    "coherency_matrix": "mueller",
    "degree_of_polarization": "mueller",
    "diattenuation": "mueller",
    "ideal_depolarizer": "mueller",
    "is_physically_valid": "mueller",
    "linear_polarizer": "mueller",
    "lu_chipman_decompose": "mueller",
    "lu_chipman_maps": "mueller",
    "matricize": "mueller",
    "mueller_from_coherency": "mueller",
    "polarizance": "mueller",
    "quarter_wave_plate": "mueller",
    "unpolarized_stokes": "mueller",
    "vectorize": "mueller",
    # forward model
    "FRAME_PHASE": "forward",
    "OMEGA_DEFAULT": "forward",
    "SPEED_RATIO": "forward",
    "ModulationState": "forward",
    "SystemRow": "forward",
    "alphas": "forward",
    "constraint_row": "forward",
    "constraint_rows": "forward",
    "intensity": "forward",
    "intensity_profile": "forward",
    "phase_alphas": "forward",
    "system_row": "forward",
    "system_rows": "forward",
    # simulation
    "EVENT_DTYPE": "simulate",
    "NoiseConfig": "simulate",
    "SensorConfig": "simulate",
    "SimulatedRecording": "simulate",
    "TriggerRecord": "simulate",
    "emit_triggers": "simulate",
    "events_to_array": "simulate",
    "inject_noise": "simulate",
    "simulate_pixel": "simulate",
    "simulate_pixel_times": "simulate",
    "simulate_ramp_stimulus": "simulate",
    "simulate_recording": "simulate",
    # calibration
    "CalibrationParams": "calibrate",
    "FrameWindow": "calibrate",
    "OffsetSearchResult": "calibrate",
    "angle_of_time": "calibrate",
    "calibrate_qwp_offsets": "calibrate",
    "corrected_dt": "calibrate",
    "dynamic_offset": "calibrate",
    "fit_contrast_threshold": "calibrate",
    "frame_windows": "calibrate",
    # reconstruction
    "AmbiguousPixelError": "reconstruct",
    "PixelSystem": "reconstruct",
    "SolverConfig": "reconstruct",
    "VideoSystems": "reconstruct",
    "build_systems": "reconstruct",
    "per_pixel_reconstruct": "reconstruct",
    "propagate_and_refine": "reconstruct",
    "reconstruct_video": "reconstruct",
    "solve_homogeneous": "reconstruct",
    "spatio_temporal_neighbors": "reconstruct",
    "update_irls_weights": "reconstruct",
    # containers, scenes, file formats
    "MuellerVideo": "video",
    "Region": "scenes",
    "SceneSpec": "scenes",
    "RampSpec": "scenes",
    "element_matrix": "scenes",
    "load_scene": "scenes",
    "save_scene": "scenes",
    "read_calibration": "formats",
    "read_events": "formats",
    "read_mueller_video": "formats",
    "write_calibration": "formats",
    "write_events": "formats",
    "write_mueller_video": "formats",
    "write_pgm": "formats",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module 'eventpol' has no attribute '{name}'")
    return getattr(import_module(f"eventpol.{module}"), name)


def __dir__():
    return __all__
