"""Beat event sequences: ordered times in seconds with optional bar positions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class BeatSequence:
    """Strictly increasing beat times, optionally labeled with metrical position.

    ``positions[i] == 1`` marks a downbeat; higher values count the beat
    within its bar. ``positions`` is ``None`` for beat-only sequences.
    """

    times: np.ndarray
    positions: np.ndarray | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        if times.size and times[0] < 0:
            raise ValueError("beat times must be non-negative")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("beat times must be strictly increasing")
        self.times = times
        if self.positions is not None:
            pos = np.asarray(self.positions, dtype=np.int64).reshape(-1)
            if pos.shape != times.shape:
                raise ValueError("positions must align one-to-one with times")
            if pos.size and pos.min() < 1:
                raise ValueError("metrical positions are 1-based")
            self.positions = pos

    def __len__(self) -> int:
        return int(self.times.size)

    def downbeats(self) -> "BeatSequence":
        """Sub-sequence of events at metrical position 1."""
        if self.positions is None:
            return BeatSequence(np.empty(0))
        mask = self.positions == 1
        return BeatSequence(self.times[mask], self.positions[mask])
