"""Counter-based random numbers keyed by pixel coordinates.

The propagation stage draws one perturbation per pixel per round.  Drawing
from a stream generator would make the result depend on pixel visiting
order; instead every draw is a pure function of
``(seed, x, y, frame, round)``, so results are identical under any degree
of parallelism.  Uses the splitmix64 finalizer for mixing and Box-Muller
for the normal transform.
"""

from __future__ import annotations

import numpy as np

__all__ = ["keyed_normals"]

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z + _GAMMA).astype(np.uint64)
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z


def _keyed_state(seed, x, y, f, round_idx):
    state = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + np.zeros(1, np.uint64))
    for part in (x, y, f, round_idx):
        part = np.asarray(part, dtype=np.uint64)
        state = _mix(state ^ part)
    return state


def _uniforms(state: np.ndarray, lane: int) -> np.ndarray:
    h = _mix(state ^ np.uint64(lane * 0x632BE59BD9B4E019 & 0xFFFFFFFFFFFFFFFF))
    # 53-bit mantissa, shifted into (0, 1].
    return ((h >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


def keyed_normals(seed, x, y, f, round_idx, n: int) -> np.ndarray:
    """``n`` standard normal draws per key.

    ``x``, ``y``, ``f`` broadcast to the key shape; the result has shape
    ``key_shape + (n,)``.  Deterministic in all arguments.
    """
    x, y, f = np.broadcast_arrays(
        np.asarray(x, np.uint64), np.asarray(y, np.uint64), np.asarray(f, np.uint64)
    )
    with np.errstate(over="ignore"):
        state = _keyed_state(seed, x, y, f, round_idx)
        out = np.empty(x.shape + (n,), dtype=np.float64)
        for pair in range((n + 1) // 2):
            u1 = _uniforms(state, 2 * pair)
            u2 = _uniforms(state, 2 * pair + 1)
            radius = np.sqrt(-2.0 * np.log(u1))
            out[..., 2 * pair] = radius * np.cos(2.0 * np.pi * u2)
            if 2 * pair + 1 < n:
                out[..., 2 * pair + 1] = radius * np.sin(2.0 * np.pi * u2)
    return out
