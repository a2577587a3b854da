"""Binary file formats and image output.

All multi-byte fields are little-endian; complete byte layouts are
documented in ``docs/formats.md``.  Every format round-trips bit-exactly
(write, read, write again produces identical bytes).

* Event files (``.evt``): header + microsecond event records + trigger
  records.
* Mueller video files (``.mmv``): header + per-pixel 16 doubles and a
  validity byte.
* Calibration files (``.calb``): sensor thresholds (scalar or per-pixel
  maps), refractory time, plate offsets.
* Portable grayscale images (binary PGM, ``P5``) for rendered maps.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from eventpol import calibrate as cal
from eventpol.simulate import EVENT_DTYPE, TriggerRecord
from eventpol.video import MuellerVideo

__all__ = [
    "FormatError",
    "write_events",
    "read_events",
    "write_mueller_video",
    "read_mueller_video",
    "write_calibration",
    "read_calibration",
    "write_pgm",
]

_EVENT_MAGIC = b"EVTS"
_VIDEO_MAGIC = b"MMVD"
_CALIB_MAGIC = b"CALB"
_VERSION = 1

# Sentinel for a missing camera-side trigger timestamp.
_NO_TRIGGER = np.int64(np.iinfo(np.int64).min)

_TRIGGER_DTYPE = np.dtype([("f", "<u4"), ("t_on", "<i8"), ("t_off", "<i8")])

_EVENT_HEADER = struct.Struct("<4sIIIddQQ")
_VIDEO_HEADER = struct.Struct("<4sIIIIB")
_CALIB_HEADER = struct.Struct("<4sIddddBII")


class FormatError(ValueError):
    """Malformed or mismatched file content."""


def _read_exact(handle, n, what):
    data = handle.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file while reading {what}")
    return data


def write_events(
    path,
    events: np.ndarray,
    triggers: TriggerRecord,
    width: int,
    height: int,
    omega: float,
    eta: float,
) -> None:
    """Write an event recording; events must be sorted by timestamp."""
    events = np.ascontiguousarray(events, dtype=EVENT_DTYPE)
    if np.any(np.diff(events["t"]) < 0):
        raise FormatError("events must be sorted by timestamp")
    n_trig = len(triggers.t_on)
    trig = np.zeros(n_trig, dtype=_TRIGGER_DTYPE)
    trig["f"] = np.arange(n_trig)
    trig["t_on"] = np.round(np.asarray(triggers.t_on) * 1e6).astype(np.int64)
    t_off = np.asarray(triggers.t_off, dtype=float)
    t_off_us = np.full(n_trig, _NO_TRIGGER)
    ok = np.isfinite(t_off)
    t_off_us[: len(t_off)][ok] = np.round(t_off[ok] * 1e6).astype(np.int64)
    trig["t_off"] = t_off_us

    with open(Path(path), "wb") as handle:
        handle.write(
            _EVENT_HEADER.pack(
                _EVENT_MAGIC,
                _VERSION,
                width,
                height,
                omega,
                eta,
                len(events),
                n_trig,
            )
        )
        handle.write(events.tobytes())
        handle.write(trig.tobytes())


def read_events(path):
    """Read an event recording.

    Returns ``(events, triggers, meta)`` where ``meta`` is a dict of header
    fields (``width``, ``height``, ``omega``, ``eta``).
    """
    with open(Path(path), "rb") as handle:
        header = _read_exact(handle, _EVENT_HEADER.size, "event header")
        magic, version, width, height, omega, eta, n_events, n_trig = (
            _EVENT_HEADER.unpack(header)
        )
        if magic != _EVENT_MAGIC:
            raise FormatError("not an event file")
        if version != _VERSION:
            raise FormatError(f"unsupported event file version {version}")
        events = np.frombuffer(
            _read_exact(handle, n_events * EVENT_DTYPE.itemsize, "events"),
            dtype=EVENT_DTYPE,
        ).copy()
        trig = np.frombuffer(
            _read_exact(handle, n_trig * _TRIGGER_DTYPE.itemsize, "triggers"),
            dtype=_TRIGGER_DTYPE,
        )
        if handle.read(1):
            raise FormatError("trailing bytes after event body")
    if np.any(np.diff(events["t"]) < 0):
        raise FormatError("event timestamps not sorted")
    t_on = trig["t_on"].astype(float) * 1e-6
    t_off = np.where(
        trig["t_off"] == _NO_TRIGGER, np.nan, trig["t_off"].astype(float) * 1e-6
    )
    triggers = TriggerRecord(t_on=t_on, t_off=t_off[:-1] if n_trig else t_off)
    meta = {"width": width, "height": height, "omega": omega, "eta": eta}
    return events, triggers, meta


def write_mueller_video(path, video: MuellerVideo) -> None:
    frames, height, width = video.m.shape[:3]
    with open(Path(path), "wb") as handle:
        handle.write(
            _VIDEO_HEADER.pack(
                _VIDEO_MAGIC, _VERSION, frames, height, width,
                1 if video.normalized else 0,
            )
        )
        flat = video.m.reshape(frames * height * width, 16)
        body = np.zeros(
            len(flat), dtype=np.dtype([("m", "<f8", 16), ("valid", "u1")])
        )
        body["m"] = flat
        body["valid"] = video.valid.reshape(-1)
        handle.write(body.tobytes())


def read_mueller_video(path) -> MuellerVideo:
    with open(Path(path), "rb") as handle:
        header = _read_exact(handle, _VIDEO_HEADER.size, "video header")
        magic, version, frames, height, width, normalized = _VIDEO_HEADER.unpack(
            header
        )
        if magic != _VIDEO_MAGIC:
            raise FormatError("not a Mueller video file")
        if version != _VERSION:
            raise FormatError(f"unsupported video file version {version}")
        n = frames * height * width
        body = np.frombuffer(
            _read_exact(handle, n * 129, "video body"),
            dtype=np.dtype([("m", "<f8", 16), ("valid", "u1")]),
        )
        if handle.read(1):
            raise FormatError("trailing bytes after video body")
    return MuellerVideo(
        m=body["m"].reshape(frames, height, width, 4, 4).copy(),
        valid=body["valid"].reshape(frames, height, width).astype(bool),
        normalized=bool(normalized),
    )


def write_calibration(path, calib: cal.CalibrationParams) -> None:
    c_on = np.asarray(calib.c_on, dtype=float)
    c_off = np.asarray(calib.c_off, dtype=float)
    per_pixel = c_on.ndim == 2
    if per_pixel != (c_off.ndim == 2) or (per_pixel and c_on.shape != c_off.shape):
        raise FormatError("threshold maps must both be scalars or equal-shape maps")
    height, width = c_on.shape if per_pixel else (0, 0)
    with open(Path(path), "wb") as handle:
        handle.write(
            _CALIB_HEADER.pack(
                _CALIB_MAGIC,
                _VERSION,
                calib.omega,
                calib.eta,
                calib.phi_calib1,
                calib.phi_calib2,
                1 if per_pixel else 0,
                height,
                width,
            )
        )
        handle.write(c_on.astype("<f8").tobytes())
        handle.write(c_off.astype("<f8").tobytes())


def read_calibration(path) -> cal.CalibrationParams:
    with open(Path(path), "rb") as handle:
        header = _read_exact(handle, _CALIB_HEADER.size, "calibration header")
        magic, version, omega, eta, phi1, phi2, per_pixel, height, width = (
            _CALIB_HEADER.unpack(header)
        )
        if magic != _CALIB_MAGIC:
            raise FormatError("not a calibration file")
        if version != _VERSION:
            raise FormatError(f"unsupported calibration file version {version}")
        count = height * width if per_pixel else 1
        c_on = np.frombuffer(
            _read_exact(handle, 8 * count, "on thresholds"), dtype="<f8"
        )
        c_off = np.frombuffer(
            _read_exact(handle, 8 * count, "off thresholds"), dtype="<f8"
        )
        if handle.read(1):
            raise FormatError("trailing bytes after calibration body")
    if per_pixel:
        c_on = c_on.reshape(height, width).copy()
        c_off = c_off.reshape(height, width).copy()
    else:
        c_on = float(c_on[0])
        c_off = float(c_off[0])
    return cal.CalibrationParams(
        c_on=c_on, c_off=c_off, eta=eta, phi_calib1=phi1, phi_calib2=phi2,
        omega=omega,
    )


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2-d array already scaled to [0, 1] as an 8-bit binary PGM."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ValueError("PGM output expects a 2-d image")
    data = np.clip(np.nan_to_num(image, nan=0.0), 0.0, 1.0)
    pixels = np.round(data * 255.0).astype(np.uint8)
    with open(Path(path), "wb") as handle:
        handle.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode())
        handle.write(pixels.tobytes())
