"""Robust Mueller-matrix video reconstruction from event streams.

Two stages:

1. Per-pixel estimation.  The constraint rows of a pixel's events stack
   into a matrix ``B``; the vectorized Mueller matrix is the null direction
   of ``W D B``, found as the right singular vector of the smallest singular
   value (``D`` weights each row by its event-time gap so densely sampled
   stretches do not dominate, ``W`` holds robust weights).  The estimate is
   projected onto the physically valid set after every solve and the weights
   are recomputed as ``1 / max(|B m|, epsilon)``, iterated a fixed number of
   times.

2. Propagation and refinement.  A red-black sweep alternates over the
   checkerboard colors of ``(x + y + f)``; each pixel adopts a neighbor's
   matrix (4-connected spatial neighbors plus the same pixel in the
   adjacent frames) when that strictly lowers its own weighted L1 residual
   ``||D B m||_1``, then tries a multiplicative random perturbation
   ``CloudeFilter(m * (1 + sigma * N))``, accepted under the same rule.
   Candidate draws are keyed by (seed, x, y, frame, round), so the result
   is independent of the update order within a color phase.

All estimates are normalized to ``M00 = 1``; the residuals are invariant to
the intensity scale of the scene, so only the normalized matrix is
recoverable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from eventpol import calibrate as cal
from eventpol import forward as fw
from eventpol import mueller as mm
from eventpol._rng import keyed_normals
from eventpol.video import MuellerVideo

__all__ = [
    "SolverConfig",
    "PixelSystem",
    "AmbiguousPixelError",
    "VideoSystems",
    "build_systems",
    "solve_homogeneous",
    "update_irls_weights",
    "per_pixel_reconstruct",
    "spatio_temporal_neighbors",
    "propagate_and_refine",
    "reconstruct_video",
]

# Relative gap between the two smallest singular values below which the
# null direction is considered ambiguous.
_RANK_TOL = 1e-12


class AmbiguousPixelError(ValueError):
    """The pixel's constraint system has more than one null direction."""


@dataclass
class SolverConfig:
    """Reconstruction parameters (see module docs for their roles)."""

    epsilon: float = 1e-6
    irls_iterations: int = 5
    propagation_iterations: int = 10
    sigma: float = 0.01
    k_min: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.epsilon <= 0 or self.sigma < 0:
            raise ValueError("epsilon must be positive and sigma nonnegative")
        if self.irls_iterations < 1 or self.propagation_iterations < 0:
            raise ValueError("iteration counts must be positive")
        if self.k_min < 1:
            raise ValueError("k_min must be positive")


@dataclass
class PixelSystem:
    """Stacked constraint rows of one pixel in one frame.

    ``b`` is ``(K, 16)``; ``dt_weights`` holds the positive event-time gaps
    (normalized-phase units) forming the diagonal of ``D``; ``irls_weights``
    are the robust weights ``w`` (initialized to ones).
    """

    b: np.ndarray
    dt_weights: np.ndarray
    irls_weights: np.ndarray = field(default=None)

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        self.dt_weights = np.asarray(self.dt_weights, dtype=float)
        if self.b.ndim != 2 or self.b.shape[1] != 16:
            raise ValueError("constraint rows must form a (K, 16) matrix")
        if np.any(self.dt_weights <= 0):
            raise ValueError("dt weights must be strictly positive")
        if self.irls_weights is None:
            self.irls_weights = np.ones(len(self.b))

    @property
    def k(self) -> int:
        return len(self.b)


def solve_homogeneous(system: PixelSystem) -> np.ndarray:
    """Null direction of ``W D B`` as a normalized 16-vector.

    Returns the right singular vector of the smallest singular value,
    sign-fixed to a positive first component and rescaled to ``M00 = 1``.
    Raises :class:`AmbiguousPixelError` when the system is rank-deficient
    beyond one null dimension.
    """
    g = (system.irls_weights * system.dt_weights)[:, None] * system.b
    _, s, vh = np.linalg.svd(g, full_matrices=True)
    # With K rows the system has at least 16 - K exact null dimensions, so
    # a unique null direction needs rank 15: at least 15 rows and a second
    # smallest singular value bounded away from zero.
    if system.k < 15 or s[0] <= 0.0:
        raise AmbiguousPixelError(
            "constraint system has more than one null direction"
        )
    second_smallest = s[-1] if system.k == 15 else s[-2]
    if second_smallest < _RANK_TOL * s[0]:
        raise AmbiguousPixelError(
            "constraint system has more than one null direction"
        )
    v = vh[-1]
    if abs(v[0]) < 1e-9:
        raise AmbiguousPixelError("null direction has a vanishing M00")
    return v / v[0]


def update_irls_weights(system: PixelSystem, m_hat: np.ndarray) -> np.ndarray:
    """Robust weights ``1 / max(|B m|, epsilon)`` for the current estimate."""
    resid = np.abs(system.b @ np.asarray(m_hat, dtype=float).reshape(16))
    return 1.0 / np.maximum(resid, 1e-6)


def per_pixel_reconstruct(system: PixelSystem, cfg: SolverConfig) -> np.ndarray:
    """Robust per-pixel estimate: solve, validity-project, reweight.

    Returns the final filtered matrix normalized to ``M00 = 1``.  Raises
    ``ValueError`` if the pixel has fewer than ``cfg.k_min`` rows and
    propagates solver errors.
    """
    if system.k < cfg.k_min:
        raise ValueError(
            f"insufficient events: {system.k} rows < k_min = {cfg.k_min}"
        )
    system.irls_weights = np.ones(system.k)
    m = None
    for iteration in range(cfg.irls_iterations):
        v = solve_homogeneous(system)
        m = mm.cloude_filter(v.reshape(4, 4))
        if not m[0, 0] > 1e-12:
            raise AmbiguousPixelError("validity projection collapsed the estimate")
        m = m / m[0, 0]
        if iteration + 1 < cfg.irls_iterations:
            resid = np.abs(system.b @ m.reshape(16))
            system.irls_weights = 1.0 / np.maximum(resid, cfg.epsilon)
    return m


def spatio_temporal_neighbors(x, y, f, shape):
    """Propagation neighborhood of a pixel: red-black extended in time.

    The 4-connected spatial neighbors in the same frame plus the same
    pixel in the two adjacent frames, clipped at the volume boundary.
    ``shape`` is ``(frames, height, width)``.  All neighbors of a pixel
    have the opposite checkerboard color of ``(x + y + f)``.
    """
    frames, height, width = shape
    if not (0 <= x < width and 0 <= y < height and 0 <= f < frames):
        raise ValueError("pixel coordinates out of bounds")
    candidates = [
        (x - 1, y, f),
        (x + 1, y, f),
        (x, y - 1, f),
        (x, y + 1, f),
        (x, y, f - 1),
        (x, y, f + 1),
    ]
    return [
        (xn, yn, fn)
        for xn, yn, fn in candidates
        if 0 <= xn < width and 0 <= yn < height and 0 <= fn < frames
    ]


@dataclass
class VideoSystems:
    """Constraint systems of every pixel of every frame, stored compactly.

    Each event pair contributes (midpoint phase, phase gap, measured rate);
    the 16-entry rows are re-expanded per frame on demand, which keeps the
    resident size proportional to the event count rather than 16x that.
    Pairs are sorted by (frame, pixel).
    """

    frames: int
    height: int
    width: int
    i1: float
    i2_of_frame: np.ndarray
    phase: np.ndarray
    dphase: np.ndarray
    rate: np.ndarray
    pixel: np.ndarray
    frame_bounds: np.ndarray  # (frames + 1,) slice boundaries

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def counts(self) -> np.ndarray:
        """(frames, n_pixels) number of rows per pixel."""
        out = np.zeros((self.frames, self.n_pixels), dtype=np.int64)
        for f in range(self.frames):
            lo, hi = self.frame_bounds[f], self.frame_bounds[f + 1]
            np.add.at(out[f], self.pixel[lo:hi], 1)
        return out

    def frame_rows(self, f: int):
        """``(rows, dphase, pixel, offsets)`` of frame ``f``.

        ``rows`` are the raw constraint rows (`B`, no weights); ``offsets``
        is the CSR boundary array over flat pixel indices.
        """
        lo, hi = self.frame_bounds[f], self.frame_bounds[f + 1]
        a, da = fw.system_rows(self.phase[lo:hi], self.i1, self.i2_of_frame[f])
        rows = da - self.rate[lo:hi, None] * a
        pixel = self.pixel[lo:hi]
        offsets = np.searchsorted(pixel, np.arange(self.n_pixels + 1))
        return rows, self.dphase[lo:hi], pixel, offsets

    def pixel_system(self, x: int, y: int, f: int) -> PixelSystem:
        """Single-pixel system (for inspection and tests)."""
        rows, dphase, pixel, offsets = self.frame_rows(f)
        flat = y * self.width + x
        sel = slice(offsets[flat], offsets[flat + 1])
        return PixelSystem(b=rows[sel], dt_weights=dphase[sel])


def build_systems(
    events: np.ndarray,
    triggers,
    calib: cal.CalibrationParams,
    width: int,
    height: int,
    max_gap_phase: float = np.pi / 100,
) -> VideoSystems:
    """Pair consecutive same-pixel events into constraint systems.

    Pairs must fall inside one frame window; gaps are refractory-corrected
    and pairs with nonpositive corrected gaps are dropped, as are pairs of
    uncalibrated pixels (NaN threshold).  Frames without a usable trigger
    are skipped entirely (their pixels stay invalid).

    Pairs whose phase gap exceeds ``max_gap_phase`` are also dropped: the
    event relation treats the measured rate as an instantaneous derivative,
    which stops being meaningful once the gap is comparable to the fastest
    modulation period (pi/10 of phase), and the density weighting ``D``
    would otherwise give exactly those rows the largest influence.
    """
    windows = cal.frame_windows(triggers)
    n_frames = triggers.n_frames
    span = np.full(n_frames, np.nan)
    phi_dyn = np.full(n_frames, np.nan)
    for w in windows:
        span[w.f] = w.span
        phi_dyn[w.f] = w.phi_dynamic

    order = np.lexsort((events["t"], events["x"], events["y"]))
    ev = events[order]
    t = ev["t"].astype(float) * 1e-6
    x = ev["x"].astype(np.int64)
    y = ev["y"].astype(np.int64)

    same = (x[1:] == x[:-1]) & (y[1:] == y[:-1])
    t_on = np.asarray(triggers.t_on)
    widx = np.searchsorted(t_on, t, side="right") - 1
    in_range = (widx >= 0) & (widx < n_frames)
    pair_ok = same & in_range[:-1] & (widx[1:] == widx[:-1])
    wf = np.where(in_range, widx, 0)[:-1]
    pair_ok &= np.isfinite(span[wf])

    dt = cal.corrected_dt(t[:-1], t[1:], calib.eta)
    pair_ok &= dt > 0
    with np.errstate(invalid="ignore"):
        pair_ok &= np.pi * dt <= max_gap_phase * span[wf]

    pol = ev["p"][1:].astype(float)
    if np.ndim(calib.c_on) == 0 and np.ndim(calib.c_off) == 0:
        contrast = np.where(pol > 0, float(calib.c_on), float(calib.c_off))
    else:
        c_on_map = np.broadcast_to(np.asarray(calib.c_on, float), (height, width))
        c_off_map = np.broadcast_to(np.asarray(calib.c_off, float), (height, width))
        contrast = np.where(
            pol > 0, c_on_map[y[1:], x[1:]], c_off_map[y[1:], x[1:]]
        )
    pair_ok &= np.isfinite(contrast)

    sel = np.nonzero(pair_ok)[0]
    f_sel = wf[sel]
    t_mid = 0.5 * (t[sel] + t[sel + 1])
    phase = np.pi * (t_mid - t_on[f_sel]) / span[f_sel]
    dphase = np.pi * dt[sel] / span[f_sel]
    rate = pol[sel] * contrast[sel] / dphase
    pixel = (y[sel] * width + x[sel]).astype(np.int64)

    order2 = np.lexsort((pixel, f_sel))
    f_sel = f_sel[order2]
    frame_bounds = np.searchsorted(f_sel, np.arange(n_frames + 1))
    return VideoSystems(
        frames=n_frames,
        height=height,
        width=width,
        i1=calib.phi_calib1,
        i2_of_frame=calib.phi_calib2 - fw.SPEED_RATIO * phi_dyn,
        phase=phase[order2],
        dphase=dphase[order2],
        rate=rate[order2],
        pixel=pixel[order2],
        frame_bounds=frame_bounds,
    )


def _bucket_solve(rows, dphase, offsets, pixels, cfg, use_cloude=True):
    """Batched robust solve for the listed flat pixel indices of one frame.

    Returns ``(matrices (P, 4, 4), ok (P,))``; failed pixels (ambiguous or
    collapsed) are reported not-ok.
    """
    counts = offsets[pixels + 1] - offsets[pixels]
    out = np.zeros((len(pixels), 4, 4))
    ok = np.zeros(len(pixels), dtype=bool)
    order = np.argsort(counts, kind="stable")
    # Power-of-two buckets bound the zero-padding waste.
    start = 0
    while start < len(order):
        k0 = counts[order[start]]
        cap = max(16, 1 << int(np.ceil(np.log2(max(k0, 1)))))
        end = start
        while end < len(order) and counts[order[end]] <= cap:
            end += 1
        idx = order[start:end]
        b = np.zeros((len(idx), cap, 16))
        d = np.zeros((len(idx), cap))
        for j, pi in enumerate(idx):
            p = pixels[pi]
            s = slice(offsets[p], offsets[p + 1])
            b[j, : counts[pi]] = rows[s]
            d[j, : counts[pi]] = dphase[s]
        m_flat, good = _irls_batch(b, d, cfg, use_cloude)
        out[idx] = m_flat
        ok[idx] = good
        start = end
    return out, ok


def _irls_batch(b, d, cfg, use_cloude):
    """Vectorized IRLS over a (P, K, 16) stack of padded systems."""
    n = len(b)
    w = np.ones(d.shape)
    m = np.zeros((n, 4, 4))
    good = np.ones(n, dtype=bool)
    for iteration in range(cfg.irls_iterations):
        g = (w * d)[:, :, None] * b
        _, s, vh = np.linalg.svd(g, full_matrices=False)
        good &= s[:, 0] > 0.0
        good &= s[:, -2] >= _RANK_TOL * np.maximum(s[:, 0], np.finfo(float).tiny)
        v = vh[:, -1, :]
        lead = v[:, 0]
        good &= np.abs(lead) > 1e-9
        v = v * np.sign(lead)[:, None]
        v = v / np.where(np.abs(lead) > 1e-9, np.abs(lead), 1.0)[:, None]
        m = v.reshape(n, 4, 4)
        if use_cloude:
            m = mm.cloude_filter(m)
            lead = m[:, 0, 0].copy()
            good &= lead > 1e-12
            lead[lead <= 1e-12] = 1.0
            m = m / lead[:, None, None]
        if iteration + 1 < cfg.irls_iterations:
            resid = np.abs(np.einsum("pki,pi->pk", b, m.reshape(n, 16)))
            w = 1.0 / np.maximum(resid, cfg.epsilon)
    return m, good


def _per_pixel_stage(systems: VideoSystems, cfg: SolverConfig, use_cloude=True):
    shape = (systems.frames, systems.height, systems.width)
    matrices = np.broadcast_to(np.eye(4), shape + (4, 4)).copy()
    valid = np.zeros(shape, dtype=bool)
    counts = systems.counts()
    for f in range(systems.frames):
        solvable = np.nonzero(counts[f] >= cfg.k_min)[0]
        if len(solvable) == 0:
            continue
        rows, dphase, _, offsets = systems.frame_rows(f)
        m, ok = _bucket_solve(rows, dphase, offsets, solvable, cfg, use_cloude)
        flat_y, flat_x = np.divmod(solvable[ok], systems.width)
        matrices[f, flat_y, flat_x] = m[ok]
        valid[f, flat_y, flat_x] = True
    return matrices, valid


def _phase_cost_data(systems, f):
    rows, dphase, pixel, offsets = systems.frame_rows(f)
    return rows * dphase[:, None], pixel, offsets


def _costs_for(candidates_flat, weighted_rows, pixel, offsets, subset):
    """Weighted L1 residual of per-pixel candidate matrices.

    ``candidates_flat`` is (n_pixels, 16); evaluated only for the flat
    pixel indices in ``subset`` (others return 0).
    """
    resid = np.abs(
        np.einsum("ni,ni->n", weighted_rows, candidates_flat[pixel])
    )
    sums = np.add.reduceat(
        np.concatenate([resid, [0.0]]), np.minimum(offsets[:-1], len(resid))
    )
    empty = offsets[1:] == offsets[:-1]
    sums = np.where(empty, 0.0, sums)
    return sums[subset]


def propagate_and_refine(
    video: MuellerVideo,
    systems: VideoSystems,
    cfg: SolverConfig,
    skip_propagation: bool = False,
    skip_perturbation: bool = False,
    use_cloude: bool = True,
) -> MuellerVideo:
    """Red-black spatio-temporal refinement of a per-pixel estimate.

    Candidates (neighbor matrices, then a multiplicative perturbation) are
    adopted only when they strictly lower the pixel's own weighted L1
    residual, so per-pixel cost never increases.  Invalid pixels never act
    as candidate sources but may adopt candidates.
    """
    frames, height, width = video.m.shape[:3]
    m_cur = video.m.copy()
    valid_src = video.valid.copy()

    xs = np.arange(width)[None, :] + np.zeros((height, 1), dtype=int)
    ys = np.arange(height)[:, None] + np.zeros((1, width), dtype=int)
    parity2d = (xs + ys) % 2

    cost_data = [_phase_cost_data(systems, f) for f in range(frames)]
    cost = np.zeros((frames, height, width))
    has_rows = np.zeros((frames, height, width), dtype=bool)
    all_pixels = np.arange(height * width)
    for f in range(frames):
        wrows, pixel, offsets = cost_data[f]
        cost[f] = _costs_for(
            m_cur[f].reshape(-1, 16), wrows, pixel, offsets, all_pixels
        ).reshape(height, width)
        has_rows[f] = (offsets[1:] > offsets[:-1]).reshape(height, width)

    offsets6 = ((-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1))

    for rnd in range(cfg.propagation_iterations):
        for color in (0, 1):
            snapshot = m_cur.copy()
            for f in range(frames):
                sel2d = (parity2d + f) % 2 == color
                sel2d &= has_rows[f]
                if not np.any(sel2d):
                    continue
                sel_flat = np.nonzero(sel2d.ravel())[0]
                wrows, pixel, offsets = cost_data[f]
                best_m = m_cur[f].reshape(-1, 16)[sel_flat].copy()
                best_c = cost[f].ravel()[sel_flat].copy()

                if not skip_propagation:
                    ys_sel, xs_sel = np.divmod(sel_flat, width)
                    for dx, dy, df in offsets6:
                        fn = f + df
                        if fn < 0 or fn >= frames:
                            continue
                        xn = xs_sel + dx
                        yn = ys_sel + dy
                        inb = (xn >= 0) & (xn < width) & (yn >= 0) & (yn < height)
                        if not np.any(inb):
                            continue
                        xc = np.clip(xn, 0, width - 1)
                        yc = np.clip(yn, 0, height - 1)
                        usable = inb & valid_src[fn, yc, xc]
                        cand = snapshot[fn, yc, xc].reshape(len(sel_flat), 16)
                        cand_full = np.zeros((height * width, 16))
                        cand_full[sel_flat] = cand
                        c = _costs_for(cand_full, wrows, pixel, offsets, sel_flat)
                        better = usable & (c < best_c)
                        best_m[better] = cand[better]
                        best_c[better] = c[better]

                if not skip_perturbation and cfg.sigma > 0:
                    ys_sel, xs_sel = np.divmod(sel_flat, width)
                    noise = keyed_normals(cfg.seed, xs_sel, ys_sel, f, rnd, 16)
                    pert = best_m * (1.0 + cfg.sigma * noise)
                    pert4 = pert.reshape(-1, 4, 4)
                    if use_cloude:
                        pert4 = mm.cloude_filter(pert4)
                    lead = pert4[:, 0, 0].copy()
                    usable = lead > 1e-12
                    lead[~usable] = 1.0
                    pert = (pert4 / lead[:, None, None]).reshape(-1, 16)
                    cand_full = np.zeros((height * width, 16))
                    cand_full[sel_flat] = pert
                    c = _costs_for(cand_full, wrows, pixel, offsets, sel_flat)
                    better = usable & (c < best_c)
                    best_m[better] = pert[better]
                    best_c[better] = c[better]

                m_cur[f].reshape(-1, 16)[sel_flat] = best_m
                cost[f].ravel()[sel_flat] = best_c

    return MuellerVideo(m=m_cur, valid=video.valid.copy(), normalized=True)


def reconstruct_video(
    events: np.ndarray,
    triggers,
    calib: cal.CalibrationParams,
    width: int,
    height: int,
    cfg: SolverConfig | None = None,
    skip_propagation: bool = False,
    skip_perturbation: bool = False,
    skip_cloude: bool = False,
    return_stage1: bool = False,
):
    """Full reconstruction pipeline: per-pixel estimation, then refinement.

    Returns the refined :class:`MuellerVideo` (and the per-pixel stage
    output as a second value when ``return_stage1`` is set).  Pixels with
    fewer than ``cfg.k_min`` usable event pairs are masked invalid.
    """
    cfg = cfg or SolverConfig()
    systems = build_systems(events, triggers, calib, width, height)
    matrices, valid = _per_pixel_stage(systems, cfg, use_cloude=not skip_cloude)
    stage1 = MuellerVideo(m=matrices, valid=valid, normalized=True)
    if skip_propagation and skip_perturbation:
        return (stage1, stage1) if return_stage1 else stage1
    refined = propagate_and_refine(
        stage1,
        systems,
        cfg,
        skip_propagation=skip_propagation,
        skip_perturbation=skip_perturbation,
        use_cloude=not skip_cloude,
    )
    return (refined, stage1) if return_stage1 else refined
