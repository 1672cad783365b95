"""Frame-pair sampling and the reverse-order augmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from conla.data.dataset import Episode


@dataclass
class FramePair:
    """Ordered (current, future) observation pair with interval k.

    reversed_order is True iff the pair is the inverse-order augmentation of
    a stored forward pair.
    """

    first: np.ndarray
    second: np.ndarray
    interval_k: int
    reversed_order: bool = False

    def __post_init__(self):
        if self.first.shape != self.second.shape:
            raise ValueError("pair frames must share one shape")


def sample_frame_pair(episode: Episode, k: int, t: int) -> FramePair:
    """Return (frames[t], frames[t+k]); raises IndexError when t+k is out of range."""
    if k < 1:
        raise ValueError("frame interval k must be positive")
    if t < 0 or t + k >= len(episode):
        raise IndexError(
            f"pair (t={t}, k={k}) out of range for episode of length {len(episode)}"
        )
    return FramePair(episode.frames[t], episode.frames[t + k], k, reversed_order=False)


def reverse_pair(pair: FramePair) -> FramePair:
    """Swap the frames and toggle the reversal flag; involutive."""
    return FramePair(pair.second, pair.first, pair.interval_k, not pair.reversed_order)


def valid_pair_starts(episode: Episode, k: int) -> range:
    return range(0, len(episode) - k)
