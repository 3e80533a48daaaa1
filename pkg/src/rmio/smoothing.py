"""Temporal reward smoothing with a normalized gaussian window.

Episodes are smoothed once, when committed to the real replay buffer; the
reward predictor trains on the smoothed sequence while raw rewards stay
available for inspection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SmoothingKernel:
    half_window: int
    sigma: float
    weights: np.ndarray  # length 2 * half_window + 1, sums to 1

    def __post_init__(self):
        assert self.weights.shape == (2 * self.half_window + 1,)


def build_kernel(half_window: int, sigma: float) -> SmoothingKernel:
    """Normalized gaussian weights over offsets -H..H."""
    if half_window < 0:
        raise ValueError(f"half window must be >= 0, got {half_window}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    offsets = np.arange(-half_window, half_window + 1, dtype=np.float64)
    raw = np.exp(-(offsets**2) / (2.0 * sigma**2))
    weights = raw / raw.sum()
    return SmoothingKernel(half_window=half_window, sigma=float(sigma), weights=weights)


def smooth_episode(rewards, kernel: SmoothingKernel) -> np.ndarray:
    """Convolve with edge-clamped indices: out[t] = sum_i f_i * r[clip(t+i, 0, T)].

    Computed in difference form (r_t plus weighted deviations), which is
    identical given sum(f) = 1 and keeps constant sequences exactly constant.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.ndim != 1 or rewards.size == 0:
        raise ValueError("rewards must be a non-empty 1-d sequence")
    h = kernel.half_window
    if h == 0:
        return rewards.copy()
    padded = np.pad(rewards, h, mode="edge")
    out = rewards.copy()
    for j, w in enumerate(kernel.weights):
        offset = j - h
        if offset == 0:
            continue
        out += w * (padded[j : j + rewards.size] - rewards)
    return out
