"""Uniform per-dimension action discretization.

Bins follow the floor convention: a value v in [low, high) lands in bin
floor((v - low) / (high - low) * B); out-of-range values clamp to the edge
bins, so the exact midpoint of the range maps to bin B/2. undiscretize
returns bin centers, which bounds the round-trip error by half a bin width.
"""

from __future__ import annotations

import numpy as np

from conla.errors import ConfigError


def _ranges(low, high) -> tuple[np.ndarray, np.ndarray]:
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    if np.any(high <= low):
        raise ConfigError("action range is degenerate: every dimension needs low < high")
    return low, high


def discretize_actions(actions, bins: int, low, high) -> np.ndarray:
    """Map continuous vectors (..., D) to integer bins in [0, bins)."""
    if bins < 2:
        raise ConfigError(f"bin count must be >= 2, got {bins}")
    low, high = _ranges(low, high)
    norm = (np.asarray(actions, dtype=np.float64) - low) / (high - low)
    idx = np.floor(norm * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def undiscretize(bin_idx, bins: int, low, high) -> np.ndarray:
    """Return the center of each bin."""
    if bins < 2:
        raise ConfigError(f"bin count must be >= 2, got {bins}")
    low, high = _ranges(low, high)
    centers = low + (np.asarray(bin_idx, dtype=np.float64) + 0.5) * (high - low) / bins
    return centers
