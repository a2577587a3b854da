"""Sensor and system calibration.

Recovers the parameters the reconstruction needs from dedicated recordings:

* per-pixel contrast thresholds from linear intensity-ramp stimuli,
* the fixed quarter-wave-plate offset angles via a grid search against a
  known reference target (a quarter-wave plate at 45 degrees behind a mild
  depolarizer),
* refractory-corrected event-time differences,
* the event-time to rotation-angle correspondence from the per-frame
  hardware trigger timestamps, including the per-frame dynamic offset angle
  between the two independently driven plates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from eventpol import forward as fw
from eventpol import mueller as mm

__all__ = [
    "CalibrationParams",
    "FrameWindow",
    "OffsetSearchResult",
    "corrected_dt",
    "angle_of_time",
    "dynamic_offset",
    "frame_windows",
    "fit_contrast_threshold",
    "reference_target_matrix",
    "calibrate_qwp_offsets",
]


@dataclass
class CalibrationParams:
    """Calibrated sensor and system parameters.

    ``c_on``/``c_off`` are positive contrast thresholds, either scalars or
    per-pixel ``(H, W)`` maps (NaN marks uncalibrated pixels).  ``eta`` is the
    refractory time in seconds.  The plate offset angles are reduced to
    ``[0, pi)``.
    """

    c_on: float | np.ndarray = 0.2
    c_off: float | np.ndarray = 0.2
    eta: float = 0.0
    phi_calib1: float = 0.0
    phi_calib2: float = 0.0
    omega: float = fw.OMEGA_DEFAULT

    def __post_init__(self):
        if np.any(np.asarray(self.c_on) <= 0) or np.any(np.asarray(self.c_off) <= 0):
            raise ValueError("contrast thresholds must be positive")
        if self.eta < 0:
            raise ValueError("refractory time must be nonnegative")
        self.phi_calib1 = float(np.mod(self.phi_calib1, np.pi))
        self.phi_calib2 = float(np.mod(self.phi_calib2, np.pi))

    def contrast_at(self, x, y, polarity):
        """Contrast threshold for events of the given polarity at (x, y)."""
        c = self.c_on if polarity > 0 else self.c_off
        if np.isscalar(c) or np.ndim(c) == 0:
            return float(c)
        return float(np.asarray(c)[y, x])


@dataclass(frozen=True)
class FrameWindow:
    """Temporal window of one video frame, bounded by light-side triggers."""

    f: int
    t_start: float
    t_end: float
    phi_dynamic: float = 0.0

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError("frame window must have positive duration")

    @property
    def span(self) -> float:
        return self.t_end - self.t_start


def corrected_dt(t_k, t_k_plus_1, eta):
    """Refractory-corrected time difference ``t_{k+1} - t_k - eta``.

    A nonpositive result signals a gap shorter than the refractory time; the
    caller must drop such pairs.  Vectorized.
    """
    return np.asarray(t_k_plus_1) - np.asarray(t_k) - eta


def angle_of_time(t, window: FrameWindow):
    """Light-side rotation angle (radians in ``[0, pi)``) of a time instant.

    Affine within the window: the window endpoints map to 0 and pi.
    Rejects times outside ``[t_start, t_end)``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < window.t_start) or np.any(t >= window.t_end):
        raise ValueError("time outside frame window")
    return np.pi * (t - window.t_start) / window.span


def dynamic_offset(t_trig_on, t_trig_off, t_trig_on_next) -> float:
    """Per-frame phase offset between the two plates, from encoder triggers.

    ``pi * (t_on - t_off) / (t_on_next - t_on)`` radians.
    """
    span = t_trig_on_next - t_trig_on
    if not span > 0:
        raise ValueError("trigger times must be strictly increasing")
    return np.pi * (t_trig_on - t_trig_off) / span


def frame_windows(triggers) -> list[FrameWindow]:
    """Frame windows (with dynamic offsets) from a trigger record.

    Frames whose camera-side trigger is missing (NaN) are skipped; the
    caller masks them.
    """
    windows = []
    t_on = np.asarray(triggers.t_on, dtype=float)
    t_off = np.asarray(triggers.t_off, dtype=float)
    for f in range(len(t_on) - 1):
        if f >= len(t_off) or not np.isfinite(t_off[f]):
            continue
        phi = dynamic_offset(t_on[f], t_off[f], t_on[f + 1])
        windows.append(
            FrameWindow(f=f, t_start=t_on[f], t_end=t_on[f + 1], phi_dynamic=phi)
        )
    return windows


def _slope_through_origin(x, y):
    denom = float(np.dot(x, x))
    if denom == 0.0:
        return np.nan
    return float(np.dot(x, y)) / denom


def fit_contrast_threshold(trials, width, height, eta=0.0, min_events=2):
    """Per-pixel contrast thresholds from linear-ramp recordings.

    Each trial is a tuple ``(events, a, b)`` where ``events`` is a structured
    event array recorded while the stimulus intensity followed
    ``I(t) = a * t + b`` and ``t`` is in seconds.  Consecutive same-pixel
    events of that stimulus satisfy ``dt = p * C * (t + b / a)`` to first
    order, so an origin-constrained linear regression of the
    refractory-corrected ``dt`` against ``t + b / a`` (with ``t`` taken at
    the midpoint of each pair) recovers ``p * C``.  Events pool across
    trials; on and off polarities fit separately.

    Returns ``(c_on, c_off)`` maps of shape ``(height, width)``; pixels with
    fewer than ``min_events`` usable pairs for a polarity are NaN
    (uncalibrated).
    """
    xs = {+1: [[[] for _ in range(width)] for _ in range(height)],
          -1: [[[] for _ in range(width)] for _ in range(height)]}
    ys = {+1: [[[] for _ in range(width)] for _ in range(height)],
          -1: [[[] for _ in range(width)] for _ in range(height)]}

    for events, a, b in trials:
        if a == 0:
            raise ValueError("ramp slope must be nonzero")
        order = np.lexsort((events["t"], events["x"], events["y"]))
        ev = events[order]
        t = ev["t"].astype(float) * 1e-6
        same = (
            (ev["x"][1:] == ev["x"][:-1])
            & (ev["y"][1:] == ev["y"][:-1])
            & (ev["p"][1:] == ev["p"][:-1])
        )
        dt = corrected_dt(t[:-1], t[1:], eta)
        keep = same & (dt > 0)
        mid = 0.5 * (t[:-1] + t[1:])
        for idx in np.nonzero(keep)[0]:
            x, y, p = int(ev["x"][idx]), int(ev["y"][idx]), int(ev["p"][idx + 1])
            xs[p][y][x].append(mid[idx] + b / a)
            ys[p][y][x].append(dt[idx])

    c_on = np.full((height, width), np.nan)
    c_off = np.full((height, width), np.nan)
    for y in range(height):
        for x in range(width):
            for p, out in ((+1, c_on), (-1, c_off)):
                if len(ys[p][y][x]) >= min_events:
                    slope = _slope_through_origin(
                        np.array(xs[p][y][x]), np.array(ys[p][y][x])
                    )
                    out[y, x] = p * slope
    return c_on, c_off


def reference_target_matrix(alpha: float = 0.8) -> np.ndarray:
    """Mueller matrix of the offset-calibration reference target.

    A quarter-wave plate with its fast axis at 45 degrees, behind an
    isotropic depolarizer that models non-ideal optics.
    """
    return mm.ideal_depolarizer(alpha) @ mm.quarter_wave_plate(np.pi / 4)


@dataclass
class OffsetSearchResult:
    """Outcome of the plate-offset grid search."""

    phi1: float
    phi2: float
    score: float
    grid_phi1: np.ndarray
    grid_phi2: np.ndarray
    score_map: np.ndarray
    ambiguous: bool
    degenerate: bool


def _event_measurements(events, windows, c_on, c_off, eta, rate_cap):
    """Pair consecutive same-pixel events into (phase, rate, frame) samples.

    The rate is the measured log-intensity derivative ``p * C / dphase`` in
    normalized-phase units; pairs straddling frame boundaries or with
    nonpositive corrected gaps are dropped, as are rates beyond ``rate_cap``
    (near-extinction bursts carry no offset information).
    """
    order = np.lexsort((events["t"], events["x"], events["y"]))
    ev = events[order]
    t = ev["t"].astype(float) * 1e-6
    phases, rates, frames = [], [], []
    for w in windows:
        inside = (t >= w.t_start) & (t < w.t_end)
        idx = np.nonzero(inside)[0]
        if len(idx) < 2:
            continue
        consecutive = idx[1:] == idx[:-1] + 1
        same_pixel = (ev["x"][idx[1:]] == ev["x"][idx[:-1]]) & (
            ev["y"][idx[1:]] == ev["y"][idx[:-1]]
        )
        dt = corrected_dt(t[idx[:-1]], t[idx[1:]], eta)
        keep = consecutive & same_pixel & (dt > 0)
        if not np.any(keep):
            continue
        lo, hi = idx[:-1][keep], idx[1:][keep]
        dphase = np.pi * dt[keep] / w.span
        mid = angle_of_time(0.5 * (t[lo] + t[hi]), w)
        pol = ev["p"][hi].astype(float)
        contrast = np.where(pol > 0, c_on, c_off)
        rate = pol * contrast / dphase
        ok = np.abs(rate) <= rate_cap
        phases.append(mid[ok])
        rates.append(rate[ok])
        frames.append(np.full(int(ok.sum()), w.f))
    if not phases:
        raise ValueError("no usable event pairs for calibration")
    return (
        np.concatenate(phases),
        np.concatenate(rates),
        np.concatenate(frames),
    )


def _offset_score(phase, rate, frame_phi_dyn, frames, m_vec, phi1, phi2):
    """Mean squared residual between model and measured log-derivatives."""
    i2 = phi2 - fw.SPEED_RATIO * frame_phi_dyn[frames]
    a, da = fw.system_rows(phase, phi1, i2)
    denom = a @ m_vec
    model = (da @ m_vec) / denom
    return float(np.mean((model - rate) ** 2))


def _golden_section(fun, lo, hi, tol=1e-6, max_iter=60):
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return (a + b) / 2.0


def calibrate_qwp_offsets(
    events,
    triggers,
    c_on: float,
    c_off: float,
    alpha: float = 0.8,
    eta: float = 0.0,
    grid_step: float = np.deg2rad(0.5),
    refine: bool = True,
    rate_cap: float = 200.0,
    max_samples: int = 1500,
    reference: np.ndarray | None = None,
) -> OffsetSearchResult:
    """Grid search for the plate offset angles against a known reference.

    Scores every candidate pair ``(phi1, phi2)`` on ``[0, pi)^2`` by the mean
    squared residual between the model log-derivative of the reference
    target and the per-event measured rate ``p * C / dphase``, then returns
    the arg-min, optionally polished by a golden-section pass on each axis.

    The default reference is :func:`reference_target_matrix`; measuring a
    reference without retardance (air, a bare polarizer) leaves the score
    surface with symmetric minima and the result is flagged ``ambiguous``.
    A near-constant score surface is flagged ``degenerate``
    (non-identifiable).
    """
    windows = frame_windows(triggers)
    if not windows:
        raise ValueError("trigger record defines no frame windows")
    phase, rate, frames = _event_measurements(
        events, windows, c_on, c_off, eta, rate_cap
    )
    if len(phase) > max_samples:
        step = len(phase) // max_samples + 1
        phase, rate, frames = phase[::step], rate[::step], frames[::step]
    n_frames = max(w.f for w in windows) + 1
    frame_phi_dyn = np.zeros(n_frames)
    for w in windows:
        frame_phi_dyn[w.f] = w.phi_dynamic

    target = reference_target_matrix(alpha) if reference is None else reference
    m_vec = mm.vectorize(np.asarray(target, dtype=float))

    grid = np.arange(0.0, np.pi, grid_step)
    # Factorized sweep: the intensity is bilinear in the two per-arm state
    # vectors, I = v2(phi2)^T M v1(phi1), so each arm is precomputed over its
    # own grid axis and the full score surface accumulates from batched
    # per-event matmuls.
    v1 = _arm_vectors_light(phase, grid)          # (G1, N, 4)
    dv1 = _arm_vectors_light_derivative(phase, grid)
    v2, dv2 = _arm_vectors_camera(phase, grid, frame_phi_dyn[frames])

    m_mat = m_vec.reshape(4, 4)
    t1 = np.einsum("ij,gnj->ngi", m_mat, v1)      # (N, G1, 4): (M @ v1)^T
    dt1 = np.einsum("ij,gnj->ngi", m_mat, dv1)
    v2t = np.transpose(v2, (1, 2, 0))             # (N, 4, G2)
    dv2t = np.transpose(dv2, (1, 2, 0))

    n = len(phase)
    acc = np.zeros((len(grid), len(grid)))
    chunk = max(1, int(4e6 // (len(grid) * len(grid))))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        den = np.matmul(t1[lo:hi], v2t[lo:hi])        # (Nc, G1, G2)
        num = np.matmul(dt1[lo:hi], v2t[lo:hi])
        num += np.matmul(t1[lo:hi], dv2t[lo:hi])
        resid = num / den - rate[lo:hi, None, None]
        acc += np.einsum("ngh,ngh->gh", resid, resid)
    score_map = acc / n

    spread = score_map.max() - score_map.min()
    degenerate = spread < 1e-9
    best = np.unravel_index(np.argmin(score_map), score_map.shape)
    phi1, phi2 = float(grid[best[0]]), float(grid[best[1]])

    # Ambiguity: another local basin at least two cells away that is
    # numerically as good as the minimum.
    smin = score_map.min()
    near = np.argwhere(score_map <= smin + 1e-6)
    d1 = np.abs(near[:, 0] - best[0])
    d1 = np.minimum(d1, len(grid) - d1)
    d2 = np.abs(near[:, 1] - best[1])
    d2 = np.minimum(d2, len(grid) - d2)
    ambiguous = bool(np.any(np.maximum(d1, d2) >= 2))

    if refine and not degenerate:
        def score1(p1):
            return _offset_score(phase, rate, frame_phi_dyn, frames, m_vec, p1, phi2)

        phi1 = _golden_section(score1, phi1 - grid_step, phi1 + grid_step)

        def score2(p2):
            return _offset_score(phase, rate, frame_phi_dyn, frames, m_vec, phi1, p2)

        phi2 = _golden_section(score2, phi2 - grid_step, phi2 + grid_step)
        phi1, phi2 = float(np.mod(phi1, np.pi)), float(np.mod(phi2, np.pi))

    final = _offset_score(phase, rate, frame_phi_dyn, frames, m_vec, phi1, phi2)
    return OffsetSearchResult(
        phi1=phi1,
        phi2=phi2,
        score=final,
        grid_phi1=grid,
        grid_phi2=grid,
        score_map=score_map,
        ambiguous=ambiguous,
        degenerate=degenerate,
    )


def _arm_vectors_light(phase, grid):
    """Probe-arm Stokes coefficients [1, a1^2, a1*a2, a2] per grid offset."""
    arg = 2.0 * (phase[None, :] + grid[:, None])
    a1, a2 = np.cos(arg), np.sin(arg)
    return np.stack([np.ones_like(a1), a1 * a1, a1 * a2, a2], axis=-1)


def _arm_vectors_light_derivative(phase, grid):
    arg = 2.0 * (phase[None, :] + grid[:, None])
    a1, a2 = np.cos(arg), np.sin(arg)
    zero = np.zeros_like(a1)
    return np.stack(
        [zero, -4.0 * a1 * a2, 2.0 * (a1 * a1 - a2 * a2), 2.0 * a1], axis=-1
    )


def _arm_vectors_camera(phase, grid, phi_dyn):
    """Analyzer-arm coefficients [1, a3^2, a3*a4, -a4] and derivative."""
    i2 = grid[:, None] - fw.SPEED_RATIO * phi_dyn[None, :]
    arg = 2.0 * i2 + 2.0 * fw.SPEED_RATIO * phase[None, :]
    a3, a4 = np.cos(arg), np.sin(arg)
    ones = np.ones_like(a3)
    zero = np.zeros_like(a3)
    v2 = np.stack([ones, a3 * a3, a3 * a4, -a4], axis=-1)
    dv2 = np.stack(
        [
            zero,
            -20.0 * a3 * a4,
            10.0 * (a3 * a3 - a4 * a4),
            -10.0 * a3,
        ],
        axis=-1,
    )
    return v2, dv2
