"""Event-stream simulation for the rotating-plate ellipsometer.

Converts the continuous per-pixel intensity signal produced by the
modulation schedule into an asynchronous event stream with a contrast
threshold, a refractory period, hardware trigger timestamps, and the noise
protocol used for synthetic evaluation.  Also synthesizes the linear-ramp
stimuli used for contrast-threshold calibration.

The generator is a plain threshold-crossing model: it tracks a reference
log intensity, emits an event whenever the log intensity departs from the
reference by the contrast threshold (crossing times located sub-step by
linear interpolation), resets the reference to the log intensity at the
event, and suppresses further events for the refractory time.  Timestamps
are kept at float precision internally and quantized to 1 microsecond when
packed into event records, mirroring the sensor clock.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from eventpol import calibrate as cal
from eventpol import forward as fw
from eventpol.video import MuellerVideo

__all__ = [
    "EVENT_DTYPE",
    "TriggerRecord",
    "SensorConfig",
    "NoiseConfig",
    "SimulatedRecording",
    "emit_triggers",
    "scan_log_signal",
    "events_to_array",
    "simulate_pixel_times",
    "simulate_pixel",
    "simulate_ramp_stimulus",
    "inject_noise",
    "simulate_recording",
]

# One event record: pixel coordinates, microsecond timestamp, polarity.
EVENT_DTYPE = np.dtype(
    [("x", "<u2"), ("y", "<u2"), ("t", "<i8"), ("p", "<i1")]
)


@dataclass(frozen=True)
class TriggerRecord:
    """Hardware trigger timestamps, seconds.

    ``t_on`` holds the light-side encoder triggers; entry ``f`` opens frame
    ``f`` and entry ``f + 1`` closes it, so ``len(t_on) = n_frames + 1``.
    ``t_off`` holds the camera-side encoder trigger of each frame
    (``n_frames`` entries; NaN marks a missing trigger).
    """

    t_on: np.ndarray
    t_off: np.ndarray

    @property
    def n_frames(self) -> int:
        return len(self.t_on) - 1


@dataclass(frozen=True)
class SensorConfig:
    """Event-sensor model parameters.

    ``c_on``/``c_off`` are the contrast thresholds (log-intensity units),
    ``eta`` the refractory time in seconds, and ``step_div`` the number of
    samples per frame used to discretize the continuous signal.
    """

    c_on: float = 0.2
    c_off: float = 0.2
    eta: float = 0.0
    step_div: int = 100_000

    def __post_init__(self):
        if self.c_on <= 0 or self.c_off <= 0:
            raise ValueError("contrast thresholds must be positive")
        if self.eta < 0:
            raise ValueError("refractory time must be nonnegative")
        if self.step_div < 8:
            raise ValueError("step_div too small to resolve the modulation")


@dataclass(frozen=True)
class NoiseConfig:
    """Noise protocol applied to simulated event streams.

    ``additive_event_noise_sigma`` is the standard deviation of Gaussian
    noise on each event's measured log-intensity derivative (in units of
    the normalized phase); ``outlier_fraction`` of events instead receive a
    heavy timestamp perturbation with ``outlier_sigma`` in the same units.
    ``timestamp_jitter_sigma`` adds plain timing jitter as a multiple of the
    local inter-event gap.  Deterministic under ``seed``.
    """

    timestamp_jitter_sigma: float = 0.0
    additive_event_noise_sigma: float = 0.5
    outlier_fraction: float = 0.05
    outlier_sigma: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ValueError("outlier_fraction must lie in [0, 1]")


@dataclass
class SimulatedRecording:
    """A synthetic recording plus the ground truth that generated it."""

    events: np.ndarray
    triggers: TriggerRecord
    ground_truth: MuellerVideo
    sensor: SensorConfig
    noise: NoiseConfig | None
    omega: float
    width: int
    height: int
    phi_calib1: float
    phi_calib2: float


def emit_triggers(
    omega: float,
    n_frames: int,
    phi_dynamic=0.0,
    jitter_sigma: float = 0.0,
    seed: int = 0,
    t_start: float = 0.0,
) -> TriggerRecord:
    """Trigger timestamps for a recording of ``n_frames`` frames.

    Light-side triggers are spaced ``pi / omega`` seconds apart (plus
    optional Gaussian jitter).  The camera-side trigger of frame ``f``
    encodes the configured dynamic offset angle:
    ``t_off = t_on - phi_dynamic * span / pi``.
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    if n_frames < 1:
        raise ValueError("empty recording")
    span = np.pi / omega
    t_on = t_start + span * np.arange(n_frames + 1, dtype=float)
    if jitter_sigma > 0:
        rng = np.random.default_rng(seed)
        t_on[1:] += rng.normal(0.0, jitter_sigma * span, n_frames)
        t_on.sort()
    phi = np.broadcast_to(np.asarray(phi_dynamic, dtype=float), (n_frames,))
    spans = np.diff(t_on)
    t_off = t_on[:-1] - phi * spans / np.pi
    return TriggerRecord(t_on=t_on, t_off=t_off)


def _first_outside(y, start, lo, hi):
    """Index of the first sample from ``start`` leaving [lo, hi], or -1."""
    n = len(y)
    j = start
    window = 64
    while j < n:
        k = min(n, j + window)
        seg = y[j:k]
        out = (seg > hi) | (seg < lo)
        idx = int(np.argmax(out))
        if out[idx]:
            return j + idx
        j = k
        window = min(window * 2, 1 << 20)
    return -1


def scan_log_signal(t, y, c_on, c_off, eta=0.0):
    """Threshold-crossing events of a sampled log-intensity signal.

    ``t`` (seconds, strictly increasing) and ``y`` (log intensity) sample
    the continuous signal; crossings are located by linear interpolation
    inside a sampling step, so several events can fall within one step.
    Returns ``(times, polarities)`` at float precision.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(t)
    if n < 2:
        return np.empty(0), np.empty(0, dtype=np.int8)
    times: list[float] = []
    pols: list[int] = []
    ref = y[0]
    t_left, y_left = t[0], y[0]
    t_allowed = -np.inf
    j = 1
    while j < n:
        if t_left < t_allowed:
            # Dead time: resume at t_allowed with the reference unchanged.
            if t_allowed >= t[-1]:
                break
            j = int(np.searchsorted(t, t_allowed, side="right"))
            frac = (t_allowed - t[j - 1]) / (t[j] - t[j - 1])
            y_resume = y[j - 1] + frac * (y[j] - y[j - 1])
            t_left, y_left = t_allowed, y_resume
            if y_resume - ref >= c_on or ref - y_resume >= c_off:
                # The band was already exceeded when the pixel woke up.
                p = 1 if y_resume - ref >= c_on else -1
                times.append(t_allowed)
                pols.append(p)
                ref = y_resume
                t_allowed = t_allowed + eta
                continue
        jx = _first_outside(y, j, ref - c_off, ref + c_on)
        if jx < 0:
            break
        if jx > j:
            t_left, y_left = t[jx - 1], y[jx - 1]
        upward = y[jx] > ref + c_on
        bound = ref + c_on if upward else ref - c_off
        frac = (bound - y_left) / (y[jx] - y_left)
        t_event = t_left + frac * (t[jx] - t_left)
        times.append(t_event)
        pols.append(1 if upward else -1)
        ref = bound
        t_left, y_left = t_event, bound
        t_allowed = t_event + eta
        j = jx
    return np.asarray(times), np.asarray(pols, dtype=np.int8)


def events_to_array(times, polarities, x=0, y=0) -> np.ndarray:
    """Pack float-precision events into microsecond event records."""
    out = np.empty(len(times), dtype=EVENT_DTYPE)
    out["x"] = x
    out["y"] = y
    out["t"] = np.round(np.asarray(times) * 1e6).astype(np.int64)
    out["p"] = polarities
    return out


def _frame_signal(m_vec, window, i1, i2, step_div):
    tau = np.arange(step_div) * (np.pi / step_div)
    a, _ = fw.system_rows(tau, i1, i2)
    intensity = a @ m_vec
    t = window.t_start + tau * (window.span / np.pi)
    return t, intensity


def _schedule_signal(m, triggers, phi_calib1, phi_calib2, step_div):
    """Sampled (t, log I) over all frames of a trigger schedule."""
    m_vec = np.asarray(m, dtype=float).reshape(16)
    windows = cal.frame_windows(triggers)
    ts, lis = [], []
    for w in windows:
        i2 = phi_calib2 - fw.SPEED_RATIO * w.phi_dynamic
        t, intensity = _frame_signal(m_vec, w, phi_calib1, i2, step_div)
        if np.any(intensity <= 0.0):
            raise ValueError(
                "nonpositive intensity in sweep; the modulated scene must "
                "stay strictly positive at the sampling resolution"
            )
        ts.append(t)
        lis.append(np.log(intensity))
    return np.concatenate(ts), np.concatenate(lis)


def simulate_pixel_times(
    m,
    triggers: TriggerRecord,
    sensor: SensorConfig,
    phi_calib1: float = 0.0,
    phi_calib2: float = 0.0,
):
    """Float-precision event times and polarities for one pixel.

    ``m`` is the scene Mueller matrix seen by the pixel; the modulation
    schedule is taken from the trigger record (one frame per window, with
    its dynamic offset folded into the camera-side plate angle).
    """
    t, log_i = _schedule_signal(
        m, triggers, phi_calib1, phi_calib2, sensor.step_div
    )
    return scan_log_signal(t, log_i, sensor.c_on, sensor.c_off, sensor.eta)


def simulate_pixel(
    m,
    triggers: TriggerRecord,
    sensor: SensorConfig,
    phi_calib1: float = 0.0,
    phi_calib2: float = 0.0,
    x: int = 0,
    y: int = 0,
) -> np.ndarray:
    """Event records (microsecond timestamps) for one pixel."""
    times, pols = simulate_pixel_times(m, triggers, sensor, phi_calib1, phi_calib2)
    return events_to_array(times, pols, x=x, y=y)


def simulate_ramp_stimulus(
    a: float, b: float, duration: float, sensor: SensorConfig, n_samples=None
):
    """Float-precision events of the linear ramp stimulus ``I = a*t + b``.

    Used for contrast-threshold calibration.  The intensity must stay
    positive over the ramp: ``b > 0`` and ``a * duration + b > 0``.
    """
    if not b > 0:
        raise ValueError("initial ramp intensity must be positive")
    if not a * duration + b > 0:
        raise ValueError("ramp reaches nonpositive intensity before it ends")
    if n_samples is None:
        n_samples = sensor.step_div
    t = np.linspace(0.0, duration, n_samples)
    return scan_log_signal(t, np.log(a * t + b), sensor.c_on, sensor.c_off, sensor.eta)


def inject_noise(
    events: np.ndarray,
    cfg: NoiseConfig,
    c_on: float,
    c_off: float,
    omega: float = fw.OMEGA_DEFAULT,
) -> np.ndarray:
    """Apply the synthetic noise protocol to an event stream.

    Additive noise perturbs each event's timestamp so that the induced
    noise on the measured log-derivative ``p * C / dphase`` has the
    configured standard deviation (the conversion uses the local gap:
    ``sigma_t = sigma * omega * gap^2 / (C * sqrt(2))``, each gap receiving
    contributions from its two bounding events).  Outlier events receive the
    same perturbation with ``outlier_sigma``.  Streams are re-sorted per
    pixel, re-quantized to microseconds, and the whole result is returned
    sorted by timestamp.  Deterministic under the seed.
    """
    out = events.copy()
    order = np.lexsort((out["t"], out["x"], out["y"]))
    out = out[order]
    pixel_key = out["y"].astype(np.int64) << 16 | out["x"].astype(np.int64)
    boundaries = np.nonzero(np.diff(pixel_key))[0] + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(out)]])

    for lo, hi in zip(starts, ends):
        k = hi - lo
        if k < 3:
            continue
        x, y = int(out["x"][lo]), int(out["y"][lo])
        rng = np.random.default_rng([cfg.seed, x, y])
        t = out["t"][lo:hi].astype(float) * 1e-6
        gaps = np.diff(t)
        # Scale each event's time noise by its smaller adjacent gap so the
        # induced rate noise never explodes on the short side of an
        # asymmetric pair.
        local = np.empty(k)
        local[0] = gaps[0]
        local[-1] = gaps[-1]
        local[1:-1] = np.minimum(gaps[:-1], gaps[1:])
        contrast = np.where(out["p"][lo:hi] > 0, c_on, c_off)

        outlier = rng.random(k) < cfg.outlier_fraction
        z = rng.standard_normal(k)
        sigma_rate = np.where(
            outlier, cfg.outlier_sigma, cfg.additive_event_noise_sigma
        )
        sigma_t = sigma_rate * omega * local**2 / (contrast * np.sqrt(2.0))
        # Keep ordinary perturbations within the linear regime of the
        # rate-to-time mapping; outliers may jump past their neighbours.
        cap = np.where(outlier, 2.0 * local, 0.25 * local)
        sigma_t = np.minimum(sigma_t, cap)
        sigma_t = np.sqrt(sigma_t**2 + (cfg.timestamp_jitter_sigma * local) ** 2)
        t_new = np.sort(t + z * sigma_t)
        out["t"][lo:hi] = np.round(t_new * 1e6).astype(np.int64)

    return out[np.argsort(out["t"], kind="stable")]


def simulate_ramp_recording(ramp):
    """Events of a repeated up/down ramp stimulus across the pixel array.

    Returns ``(events, trials)`` where each trial dict records the segment
    start time and its ramp parameters ``{"t0", "a", "b", "duration"}``
    (times in seconds, segment starts on the microsecond grid).  Every
    pixel sees the same stimulus.
    """
    top = ramp.a * ramp.duration + ramp.b
    segment_us = int(round((ramp.duration + ramp.gap) * 1e6))
    trials = []
    chunks = []
    for rep in range(ramp.repeats):
        for half, (a, b) in enumerate(((ramp.a, ramp.b), (-ramp.a, top))):
            t0 = (2 * rep + half) * segment_us * 1e-6
            times, pols = simulate_ramp_stimulus(a, b, ramp.duration, ramp.sensor)
            arr = events_to_array(times + t0, pols)
            chunks.append(arr)
            trials.append({"t0": t0, "a": a, "b": b, "duration": ramp.duration})
    base = np.concatenate(chunks)
    tiled = np.tile(base, ramp.width * ramp.height)
    xs = np.repeat(np.arange(ramp.width, dtype=np.uint16), ramp.height)
    ys = np.tile(np.arange(ramp.height, dtype=np.uint16), ramp.width)
    tiled["x"] = np.repeat(xs, len(base))
    tiled["y"] = np.repeat(ys, len(base))
    events = tiled[np.argsort(tiled["t"], kind="stable")]
    return events, trials


def simulate_recording(scene) -> SimulatedRecording:
    """Simulate a full recording of a declarative scene description.

    ``scene`` provides the image geometry, frame count, plate offsets, the
    per-region Mueller matrices, the sensor model, and the optional noise
    configuration (see ``eventpol.scenes.SceneSpec``).  Pixels of a region
    share one noiseless stream (the modulation is spatially uniform); the
    noise protocol then perturbs each pixel independently with a seed
    derived from the master seed and the pixel index.
    """
    if scene.frames < 1:
        raise ValueError("empty recording: scene must have at least one frame")
    triggers = emit_triggers(
        scene.omega,
        scene.frames,
        phi_dynamic=scene.phi_dynamic,
        jitter_sigma=scene.trigger_jitter_sigma,
        seed=scene.seed,
    )
    gt = np.zeros((scene.frames, scene.height, scene.width, 4, 4))
    chunks = []
    for region in scene.regions:
        try:
            times, pols = simulate_pixel_times(
                region.matrix,
                triggers,
                scene.sensor,
                scene.phi_calib1,
                scene.phi_calib2,
            )
        except ValueError as exc:
            raise ValueError(f"region '{region.name}': {exc}") from exc
        x0, y0, rw, rh = region.rect
        gt[:, y0 : y0 + rh, x0 : x0 + rw] = region.matrix / region.matrix[0, 0]
        base = events_to_array(times, pols)
        tiled = np.tile(base, rw * rh)
        xs = np.repeat(np.arange(x0, x0 + rw, dtype=np.uint16), rh)
        ys = np.tile(np.arange(y0, y0 + rh, dtype=np.uint16), rw)
        tiled["x"] = np.repeat(xs, len(base))
        tiled["y"] = np.repeat(ys, len(base))
        chunks.append(tiled)

    events = np.concatenate(chunks) if chunks else np.empty(0, EVENT_DTYPE)
    if scene.noise is not None:
        events = inject_noise(
            events,
            scene.noise,
            c_on=scene.sensor.c_on,
            c_off=scene.sensor.c_off,
            omega=scene.omega,
        )
    else:
        events = events[np.argsort(events["t"], kind="stable")]

    ground_truth = MuellerVideo(
        m=gt, valid=np.ones(gt.shape[:3], dtype=bool), normalized=True
    )
    return SimulatedRecording(
        events=events,
        triggers=triggers,
        ground_truth=ground_truth,
        sensor=scene.sensor,
        noise=scene.noise,
        omega=scene.omega,
        width=scene.width,
        height=scene.height,
        phi_calib1=scene.phi_calib1,
        phi_calib2=scene.phi_calib2,
    )
