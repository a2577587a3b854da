"""Container for Mueller-matrix video data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["MuellerVideo"]


@dataclass
class MuellerVideo:
    """A grid of per-pixel Mueller matrices over video frames.

    ``m`` has shape ``(F, H, W, 4, 4)``; ``valid`` has shape ``(F, H, W)``
    and masks pixels whose matrix is meaningful.  When ``normalized`` is
    true, every valid entry is scaled so its (0, 0) element is 1 (event
    measurements determine the matrix only up to intensity scale).
    """

    m: np.ndarray
    valid: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.m.shape[-2:] != (4, 4) or self.m.ndim != 5:
            raise ValueError(f"expected (F, H, W, 4, 4) data, got {self.m.shape}")
        if self.valid.shape != self.m.shape[:3]:
            raise ValueError("validity mask shape must match the video grid")

    @property
    def frames(self) -> int:
        return self.m.shape[0]

    @property
    def height(self) -> int:
        return self.m.shape[1]

    @property
    def width(self) -> int:
        return self.m.shape[2]

    @staticmethod
    def constant(m, frames, height, width, normalized=True) -> "MuellerVideo":
        """Video holding the same matrix at every pixel of every frame."""
        m = np.asarray(m, dtype=float)
        data = np.broadcast_to(m, (frames, height, width, 4, 4)).copy()
        return MuellerVideo(
            m=data, valid=np.ones((frames, height, width), dtype=bool),
            normalized=normalized,
        )

    def error_metrics(self, other: "MuellerVideo"):
        """Mean squared and mean absolute error against another video.

        Averages over the 16 matrix entries of pixels valid in both videos;
        returns ``(mse, mae, per_frame_mse, per_frame_mae)``.
        """
        if self.m.shape != other.m.shape:
            raise ValueError("video dimensions must match")
        both = self.valid & other.valid
        diff = self.m - other.m
        per_mse = np.full(self.frames, np.nan)
        per_mae = np.full(self.frames, np.nan)
        for f in range(self.frames):
            sel = diff[f][both[f]]
            if sel.size:
                per_mse[f] = np.mean(sel**2)
                per_mae[f] = np.mean(np.abs(sel))
        sel = diff[both]
        mse = float(np.mean(sel**2)) if sel.size else np.nan
        mae = float(np.mean(np.abs(sel))) if sel.size else np.nan
        return mse, mae, per_mse, per_mae
