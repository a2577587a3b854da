"""Declarative scene descriptions for the simulator.

A scene is a JSON document naming the image geometry, the modulation
parameters, the sensor and noise configuration, and a list of rectangular
regions that tile the image, each carrying a Mueller matrix.  Matrices are
written either as a named optical element with a parameter (angles in
degrees), e.g. ``"air"``, ``"lp@0"``, ``"qwp@45"``, ``"depolarizer@0.8"``,
as a ``*``-separated product of such elements (applied left to right along
the light path, i.e. matrix product order), or as an explicit list of 16
row-major numbers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from eventpol import forward as fw
from eventpol import mueller as mm
from eventpol.simulate import NoiseConfig, SensorConfig

__all__ = [
    "Region",
    "SceneSpec",
    "RampSpec",
    "element_matrix",
    "load_scene",
    "save_scene",
]


def element_matrix(spec) -> np.ndarray:
    """Mueller matrix of a scene-element description (see module docs)."""
    if isinstance(spec, (list, tuple, np.ndarray)):
        m = np.asarray(spec, dtype=float).reshape(4, 4)
        if not np.all(np.isfinite(m)):
            raise ValueError("explicit Mueller matrix entries must be finite")
        return m
    if not isinstance(spec, str):
        raise TypeError(f"unsupported element spec: {spec!r}")
    m = np.eye(4)
    for part in spec.split("*"):
        part = part.strip().lower()
        name, _, arg = part.partition("@")
        if name == "air":
            factor = np.eye(4)
        elif name == "lp":
            factor = mm.linear_polarizer(np.deg2rad(float(arg or 0.0)))
        elif name == "qwp":
            factor = mm.quarter_wave_plate(np.deg2rad(float(arg or 0.0)))
        elif name == "depolarizer":
            factor = mm.ideal_depolarizer(float(arg) if arg else 1.0)
        else:
            raise ValueError(f"unknown scene element '{part}'")
        m = m @ factor
    return m


@dataclass
class Region:
    """A rectangle of the image sharing one Mueller matrix."""

    rect: tuple[int, int, int, int]  # x0, y0, width, height
    matrix: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.shape != (4, 4):
            raise ValueError("region matrix must be 4x4")


@dataclass
class SceneSpec:
    """Everything the simulator needs to produce a synthetic recording."""

    width: int
    height: int
    frames: int
    regions: list[Region]
    omega: float = fw.OMEGA_DEFAULT
    phi_calib1: float = 0.0
    phi_calib2: float = 0.0
    phi_dynamic: float = 0.0
    trigger_jitter_sigma: float = 0.0
    sensor: SensorConfig = field(default_factory=SensorConfig)
    noise: NoiseConfig | None = None
    seed: int = 0

    def __post_init__(self):
        cover = np.zeros((self.height, self.width), dtype=np.int32)
        for region in self.regions:
            x0, y0, w, h = region.rect
            if x0 < 0 or y0 < 0 or x0 + w > self.width or y0 + h > self.height:
                raise ValueError(f"region {region.rect} exceeds the image")
            cover[y0 : y0 + h, x0 : x0 + w] += 1
        if np.any(cover != 1):
            raise ValueError("regions must tile the image exactly once")


@dataclass
class RampSpec:
    """Linear-ramp stimulus recording for contrast-threshold calibration.

    Each repeat consists of an increasing ramp ``I = a*t + b`` over
    ``duration`` seconds followed by the matching decreasing ramp, so one
    recording calibrates both polarities.  Segments are separated by
    ``gap`` seconds of idle time.
    """

    width: int
    height: int
    a: float
    b: float
    duration: float
    repeats: int = 15
    gap: float = 0.05
    sensor: SensorConfig = field(default_factory=SensorConfig)
    seed: int = 0

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("ramp needs a positive slope and start intensity")
        if self.repeats < 1:
            raise ValueError("at least one repeat required")


def scene_from_dict(doc: dict) -> SceneSpec | RampSpec:
    if doc.get("stimulus") == "ramp":
        return RampSpec(
            width=int(doc["width"]),
            height=int(doc["height"]),
            a=float(doc["a"]),
            b=float(doc["b"]),
            duration=float(doc["duration"]),
            repeats=int(doc.get("repeats", 15)),
            gap=float(doc.get("gap", 0.05)),
            sensor=SensorConfig(**doc.get("sensor", {})),
            seed=int(doc.get("seed", 0)),
        )
    return _modulated_scene_from_dict(doc)


def _modulated_scene_from_dict(doc: dict) -> SceneSpec:
    regions = []
    for i, rdoc in enumerate(doc["regions"]):
        regions.append(
            Region(
                rect=tuple(int(v) for v in rdoc["rect"]),
                matrix=element_matrix(rdoc["element"]),
                name=rdoc.get("name", rdoc["element"] if isinstance(rdoc["element"], str) else f"region{i}"),
            )
        )
    sensor = SensorConfig(**doc.get("sensor", {}))
    noise = NoiseConfig(**doc["noise"]) if "noise" in doc else None
    return SceneSpec(
        width=int(doc["width"]),
        height=int(doc["height"]),
        frames=int(doc["frames"]),
        regions=regions,
        omega=float(doc.get("omega", fw.OMEGA_DEFAULT)),
        phi_calib1=float(doc.get("phi_calib1", 0.0)),
        phi_calib2=float(doc.get("phi_calib2", 0.0)),
        phi_dynamic=doc.get("phi_dynamic", 0.0),
        trigger_jitter_sigma=float(doc.get("trigger_jitter_sigma", 0.0)),
        sensor=sensor,
        noise=noise,
        seed=int(doc.get("seed", 0)),
    )


def scene_to_dict(scene: SceneSpec) -> dict:
    doc = {
        "width": scene.width,
        "height": scene.height,
        "frames": scene.frames,
        "omega": scene.omega,
        "phi_calib1": scene.phi_calib1,
        "phi_calib2": scene.phi_calib2,
        "phi_dynamic": scene.phi_dynamic,
        "trigger_jitter_sigma": scene.trigger_jitter_sigma,
        "seed": scene.seed,
        "sensor": {
            "c_on": scene.sensor.c_on,
            "c_off": scene.sensor.c_off,
            "eta": scene.sensor.eta,
            "step_div": scene.sensor.step_div,
        },
        "regions": [
            {
                "rect": list(r.rect),
                "element": r.matrix.reshape(16).tolist(),
                "name": r.name,
            }
            for r in scene.regions
        ],
    }
    if scene.noise is not None:
        doc["noise"] = {
            "timestamp_jitter_sigma": scene.noise.timestamp_jitter_sigma,
            "additive_event_noise_sigma": scene.noise.additive_event_noise_sigma,
            "outlier_fraction": scene.noise.outlier_fraction,
            "outlier_sigma": scene.noise.outlier_sigma,
            "seed": scene.noise.seed,
        }
    return doc


def load_scene(path) -> SceneSpec:
    with open(Path(path)) as handle:
        return scene_from_dict(json.load(handle))


def save_scene(scene: SceneSpec, path) -> None:
    with open(Path(path), "w") as handle:
        json.dump(scene_to_dict(scene), handle, indent=2)
