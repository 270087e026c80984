"""Simulated user clicks for training and evaluation.

Training clicks jitter the mask's center of mass by uniform integer offsets
in [-50, 50] per axis and are rejection-sampled onto the foreground;
evaluation uses the snapped center of mass with no jitter.
"""

from __future__ import annotations

import numpy as np

from .guidance import Click

__all__ = ["center_of_mass", "sample_training_click", "eval_click"]


def _nearest_foreground(mask: np.ndarray, x: float, y: float) -> Click:
    # ties resolve to the first candidate in row-major scan order
    ys, xs = np.nonzero(mask)
    d2 = (xs - x) ** 2 + (ys - y) ** 2
    i = int(np.argmin(d2))
    return Click(int(xs[i]), int(ys[i]))


def center_of_mass(mask: np.ndarray) -> Click:
    """Rounded mean foreground coordinate, snapped onto the mask.

    Rounding is floor(mean + 0.5) per axis. When the rounded centroid lands
    on background (non-convex objects) the nearest foreground pixel wins.
    """
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        raise ValueError("center_of_mass on an empty mask")
    my = int(np.floor(ys.mean() + 0.5))
    mx = int(np.floor(xs.mean() + 0.5))
    if mask[my, mx]:
        return Click(mx, my)
    return _nearest_foreground(mask, mx, my)


def sample_training_click(
    mask: np.ndarray,
    rng: np.random.Generator,
    jitter: int = 50,
    max_attempts: int = 100,
) -> Click:
    """Center of mass plus per-axis integer jitter, constrained to the mask.

    Rejection-samples up to max_attempts; afterwards falls back to the
    foreground pixel nearest the last rejected location, so a valid click is
    always produced.
    """
    h, w = mask.shape
    base = center_of_mass(mask)
    px, py = base.x, base.y
    for _ in range(max_attempts):
        dx, dy = rng.integers(-jitter, jitter + 1, size=2)
        px, py = base.x + int(dx), base.y + int(dy)
        if 0 <= px < w and 0 <= py < h and mask[py, px]:
            return Click(px, py)
    return _nearest_foreground(mask, px, py)


def eval_click(mask: np.ndarray) -> Click:
    """Deterministic evaluation click: the snapped center of mass."""
    return center_of_mass(mask)
