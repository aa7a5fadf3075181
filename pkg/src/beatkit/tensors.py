"""Dense feature tensors: the input representation for the whole pipeline.

A :class:`FeatureTensor` holds a rank-3 float64 array laid out as
``[channels, features, frames]`` plus the frame rate of the time axis.
Channels index stacked encoder layers of the upstream feature extractor,
features index the per-layer embedding dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass
class FeatureTensor:
    """Rank-3 ``[n, f, t]`` float64 array with frame-rate metadata.

    Parameters
    ----------
    data : ndarray, shape (n, f, t)
        Feature values; converted to C-contiguous float64 on construction.
    frame_rate_hz : float
        Frames per second of the last axis.
    """

    data: np.ndarray
    frame_rate_hz: float = field(default=100.0)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ShapeError(f"feature tensor must be rank 3, got rank {arr.ndim}")
        if min(arr.shape) < 1:
            raise ShapeError(f"feature tensor axes must be non-empty, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature tensor contains non-finite values")
        if not self.frame_rate_hz > 0:
            raise ValueError(f"frame rate must be positive, got {self.frame_rate_hz}")
        self.data = arr

    @property
    def n(self) -> int:
        """Channel count (stacked encoder layers)."""
        return self.data.shape[0]

    @property
    def f(self) -> int:
        """Feature dimension per channel."""
        return self.data.shape[1]

    @property
    def t(self) -> int:
        """Frame count."""
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def slice_frames(self, start: int, end: int) -> "FeatureTensor":
        """Copy of frames ``[start, end)`` as a new tensor."""
        if not 0 <= start < end <= self.t:
            raise ShapeError(f"frame slice [{start}, {end}) outside [0, {self.t})")
        return FeatureTensor(self.data[:, :, start:end].copy(), self.frame_rate_hz)
