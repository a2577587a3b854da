"""Analytic forward model of the dual-rotating-retarder ellipsometer.

The probe arm holds a fixed linear polarizer and a quarter-wave plate
rotating at angular velocity ``omega``; the analyzer arm holds a quarter-wave
plate rotating five times faster plus a fixed linear polarizer.  With the
plate angles

    theta1(t) = omega * t + i1          (light side)
    theta2(t) = 5 * omega * t + i2      (camera side)

the detected intensity is a linear function of the vectorized scene Mueller
matrix, ``I = A @ vec(M)``, where the 16-entry row ``A`` collects products of
the four phase terms

    a1 = cos(2*i1 + 2*w),  a2 = sin(2*i1 + 2*w),
    a3 = cos(2*i2 + 10*w), a4 = sin(2*i2 + 10*w),

written in the normalized phase ``w = omega * t`` (radians of light-side
rotation; one video frame spans ``w in [0, pi)``).  ``A @ vec(M)`` equals the
physical polarizer/retarder matrix chain intensity times a fixed global
factor of 4 (the two polarizer 1/2 factors), which cancels in all
log-derivative quantities.

Time derivatives here are taken with respect to ``w``, so measured event-time
differences in seconds must be scaled by ``omega`` (equivalently, mapped
through the frame window) before they are combined with these rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "OMEGA_DEFAULT",
    "FRAME_PHASE",
    "SPEED_RATIO",
    "ModulationState",
    "SystemRow",
    "alphas",
    "phase_alphas",
    "system_rows",
    "system_row",
    "intensity",
    "intensity_profile",
    "constraint_row",
    "constraint_rows",
]

# Light-side plate angular velocity, rad/s.
OMEGA_DEFAULT = 30.0 * np.pi

# One Mueller-matrix video frame spans pi radians of light-side rotation.
FRAME_PHASE = np.pi

# The camera-side plate turns five times faster than the light-side plate.
SPEED_RATIO = 5


@dataclass(frozen=True)
class ModulationState:
    """Plate angles and time of the modulation schedule at one instant.

    ``t`` is in seconds; ``i1``/``i2`` are the fixed offset angles of the
    light- and camera-side quarter-wave plates in radians.
    """

    t: float = 0.0
    i1: float = 0.0
    i2: float = 0.0
    omega: float = OMEGA_DEFAULT

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError("omega must be positive")

    @property
    def phase(self) -> float:
        """Normalized phase ``w = omega * t`` in radians."""
        return self.omega * self.t

    @property
    def light_angle(self) -> float:
        return self.phase + self.i1

    @property
    def camera_angle(self) -> float:
        return SPEED_RATIO * self.phase + self.i2


@dataclass(frozen=True)
class SystemRow:
    """System row ``a`` and its phase derivative ``da`` (16 entries each)."""

    a: np.ndarray
    da: np.ndarray


def phase_alphas(phase, i1, i2):
    """The four phase terms ``(a1, a2, a3, a4)`` at normalized phase values.

    Vectorized: ``phase``, ``i1``, ``i2`` broadcast together.
    """
    arg1 = 2.0 * i1 + 2.0 * np.asarray(phase)
    arg2 = 2.0 * i2 + 2.0 * SPEED_RATIO * np.asarray(phase)
    return np.cos(arg1), np.sin(arg1), np.cos(arg2), np.sin(arg2)


def alphas(state: ModulationState):
    """``(a1, a2, a3, a4)`` for a single modulation state."""
    a1, a2, a3, a4 = phase_alphas(state.phase, state.i1, state.i2)
    return float(a1), float(a2), float(a3), float(a4)


def system_rows(phase, i1, i2):
    """System rows and their phase derivatives at normalized phase values.

    Returns ``(a, da)`` with shape ``broadcast_shape + (16,)``.  ``da`` is the
    exact derivative of ``a`` with respect to the phase ``w``.
    """
    a1, a2, a3, a4 = phase_alphas(phase, i1, i2)
    ones = np.ones_like(a1)

    a11 = a1 * a1
    a22 = a2 * a2
    a12 = a1 * a2
    a33 = a3 * a3
    a44 = a4 * a4
    a34 = a3 * a4

    a = np.stack(
        [
            ones,
            a11,
            a12,
            a2,
            a33,
            a11 * a33,
            a12 * a33,
            a2 * a33,
            a34,
            a11 * a34,
            a12 * a34,
            a2 * a34,
            -a4,
            -a11 * a4,
            -a12 * a4,
            -a2 * a4,
        ],
        axis=-1,
    )
    da = np.stack(
        [
            np.zeros_like(a1),
            -4.0 * a12,
            2.0 * a11 - 2.0 * a22,
            2.0 * a1,
            -20.0 * a34,
            -20.0 * a11 * a34 - 4.0 * a12 * a33,
            2.0 * a11 * a33 - 20.0 * a12 * a34 - 2.0 * a22 * a33,
            2.0 * a1 * a33 - 20.0 * a2 * a34,
            10.0 * a33 - 10.0 * a44,
            10.0 * a11 * a33 - 10.0 * a11 * a44 - 4.0 * a12 * a34,
            2.0 * a11 * a34 + 10.0 * a12 * a33 - 10.0 * a12 * a44 - 2.0 * a22 * a34,
            2.0 * a1 * a34 + 10.0 * a2 * a33 - 10.0 * a2 * a44,
            -10.0 * a3,
            -10.0 * a11 * a3 + 4.0 * a12 * a4,
            -2.0 * a11 * a4 - 10.0 * a12 * a3 + 2.0 * a22 * a4,
            -2.0 * a1 * a4 - 10.0 * a2 * a3,
        ],
        axis=-1,
    )
    return a, da


def system_row(state: ModulationState) -> SystemRow:
    """System row and derivative for a single modulation state."""
    a, da = system_rows(state.phase, state.i1, state.i2)
    return SystemRow(a=a, da=da)


def intensity(state: ModulationState, m: np.ndarray) -> float:
    """Model intensity ``A @ vec(M)`` at one modulation state.

    Equals the physical matrix-chain intensity times a global factor of 4.
    Linear in ``m``.
    """
    a, _ = system_rows(state.phase, state.i1, state.i2)
    return float(a @ np.asarray(m, dtype=float).reshape(16))


def intensity_profile(phase, i1, i2, m: np.ndarray) -> np.ndarray:
    """Model intensity over an array of normalized phases (vectorized)."""
    a, _ = system_rows(phase, i1, i2)
    return a @ np.asarray(m, dtype=float).reshape(16)


def constraint_rows(phase, i1, i2, polarity, contrast, dphase) -> np.ndarray:
    """Homogeneous constraint rows for events, vectorized.

    Each event pair contributes one row ``b = da - (p * C / dw) * a`` where
    ``dw`` is the event-time difference expressed in normalized phase
    (radians).  The scene's vectorized Mueller matrix lies in the null space:
    ``b @ vec(M) ~= 0``.
    """
    a, da = system_rows(phase, i1, i2)
    rate = np.asarray(polarity) * np.asarray(contrast) / np.asarray(dphase)
    return da - rate[..., None] * a


def constraint_row(
    state: ModulationState, polarity: int, contrast: float, dt: float
) -> np.ndarray:
    """Constraint row for one event with time difference ``dt`` in seconds.

    ``dt`` is converted to normalized phase via ``dw = omega * dt`` before
    entering the row.  Rejects ``dt <= 0`` (an upstream refractory correction
    produced a nonpositive gap) and ``contrast <= 0``.
    """
    if not dt > 0:
        raise ValueError(f"event time difference must be positive, got {dt}")
    if not contrast > 0:
        raise ValueError(f"contrast threshold must be positive, got {contrast}")
    return constraint_rows(
        state.phase, state.i1, state.i2, polarity, contrast, state.omega * dt
    )
