"""Plain-array image resampling used outside the autodiff graph (data
loading, service resize). Shares the half-pixel source-coordinate
convention with the differentiable upsampler but allows downscaling."""

from __future__ import annotations

import numpy as np

from .autodiff.ops import _resample_matrix

__all__ = ["resize_bilinear", "resize_nearest"]


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize (H,W) or (H,W,C) arrays in either direction."""
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    lh = _resample_matrix(h, out_h, np.float64)
    lw = _resample_matrix(w, out_w, np.float64)
    t = np.tensordot(lh, img.astype(np.float64), axes=([1], [0]))  # (out_h, W, [C])
    out = np.tensordot(lw, t, axes=([1], [1]))  # (out_w, out_h, [C])
    out = out.swapaxes(0, 1)
    return out.astype(img.dtype if np.issubdtype(img.dtype, np.floating) else np.float64)


def resize_nearest(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape[:2]
    rows = np.clip(np.rint((np.arange(out_h) + 0.5) * h / out_h - 0.5), 0, h - 1).astype(int)
    cols = np.clip(np.rint((np.arange(out_w) + 0.5) * w / out_w - 0.5), 0, w - 1).astype(int)
    return img[rows][:, cols].copy()
