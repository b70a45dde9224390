"""Depth slicing: one-hot occupancy stacks over uniform depth intervals.

The normalized depth range [-1, 1] is divided into S equal intervals. Every
interval is half-open [lo, hi) except the last, which closes at +1 so the
stack is a partition. Boundary values belong to the upper interval: with
S=10, a depth of exactly -0.8 activates channel 1, not channel 0.
"""

from __future__ import annotations

import numpy as np

# Nudge applied on the interval-scaled axis before flooring. Float rounding
# places values like -0.8 a hair below the real boundary; without the nudge
# they would fall into the lower interval, breaking the half-open convention.
_BOUNDARY_TOL = 1e-5


def slice_index(depth: np.ndarray, s: int) -> np.ndarray:
    """Interval index in [0, S-1] for each normalized depth value."""
    scaled = (np.asarray(depth, dtype=np.float64) + 1.0) * (s / 2.0)
    idx = np.floor(scaled + _BOUNDARY_TOL).astype(np.int64)
    return np.clip(idx, 0, s - 1)


def slice_depth(depth: np.ndarray, s: int) -> np.ndarray:
    """Ground-truth occupancy stack (H, W, S), exactly one channel active
    per pixel. ``depth`` is (H, W) in [-1, 1]."""
    d = np.asarray(depth)
    if not isinstance(s, (int, np.integer)) or s < 2:
        raise ValueError("slice count must be an integer >= 2")
    if d.ndim != 2:
        raise ValueError(f"depth map must be 2-D, got shape {d.shape}")
    if d.size and (d.min() < -1.0 - 1e-6 or d.max() > 1.0 + 1e-6):
        raise ValueError("depth values must lie in [-1, 1]")
    idx = slice_index(d, int(s))
    return np.eye(s, dtype=np.float32)[idx]


def slice_midpoints(s: int) -> np.ndarray:
    """Center depth of each interval, in normalized units."""
    edges = np.linspace(-1.0, 1.0, s + 1)
    return (edges[:-1] + edges[1:]) / 2.0


def depth_from_slices(stack: np.ndarray) -> np.ndarray:
    """Reconstruct (H, W) depth as the midpoint of each pixel's strongest
    channel. Inverse of slice_depth up to half an interval width."""
    stack = np.asarray(stack)
    if stack.ndim != 3:
        raise ValueError(f"slice stack must be (H, W, S), got {stack.shape}")
    mids = slice_midpoints(stack.shape[-1])
    return mids[np.argmax(stack, axis=-1)]


def confidence_map(pred: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Per-pixel count of slice channels strictly above ``threshold``.

    0 marks low confidence, 1 a consistent prediction, 2+ conflicting
    channels."""
    pred = np.asarray(pred)
    if pred.ndim != 3:
        raise ValueError(f"prediction stack must be (H, W, S), got {pred.shape}")
    return (pred > threshold).sum(axis=-1).astype(np.int32)
