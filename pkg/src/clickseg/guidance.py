"""Click-to-guidance-map encoders.

A user click becomes an image-sized scalar field that the network consumes
as an extra input channel. Three families: normalized Euclidean distance,
Gaussian bumps, and binary disks. All distances are measured between
integer pixel centers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "Click",
    "GuidanceMap",
    "GUIDANCE_KINDS",
    "euclidean_map",
    "gaussian_map",
    "disk_map",
    "encode_clicks",
    "resample_map",
    "save_guidance_png",
]

GUIDANCE_KINDS = ("euclidean", "gaussian", "disk")


@dataclass(frozen=True)
class Click:
    """Pixel coordinate of a positive click (negative clicks are unused)."""

    x: int
    y: int
    polarity: str = "positive"

    def in_bounds(self, h: int, w: int) -> bool:
        return 0 <= self.x < w and 0 <= self.y < h


@dataclass
class GuidanceMap:
    values: np.ndarray  # (H, W) float32
    kind: str
    params: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _check_clicks(clicks: Sequence[Click], h: int, w: int) -> None:
    if not clicks:
        raise ValueError("guidance map needs at least one click")
    for c in clicks:
        if not c.in_bounds(h, w):
            raise ValueError(f"click ({c.x},{c.y}) outside {w}x{h} image")


def _min_sq_distance(clicks: Sequence[Click], h: int, w: int) -> np.ndarray:
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    best = np.full((h, w), np.inf)
    for c in clicks:
        np.minimum(best, (xs - c.x) ** 2 + (ys - c.y) ** 2, out=best)
    return best


def euclidean_map(clicks: Sequence[Click], h: int, w: int, clamp: float = 255.0) -> GuidanceMap:
    """Min distance to any click, clamped then scaled into [0,1].

    The clamp keeps far-field values from dwarfing the RGB channels; 0 marks
    the clicked pixels themselves.
    """
    _check_clicks(clicks, h, w)
    d = np.sqrt(_min_sq_distance(clicks, h, w))
    values = np.minimum(d, clamp) / clamp
    return GuidanceMap(values.astype(np.float32), "euclidean", {"clamp": clamp})


def gaussian_map(clicks: Sequence[Click], h: int, w: int, sigma: float = 10.0) -> GuidanceMap:
    """Max over clicks of a unit-height Gaussian bump, default sigma 10 px."""
    _check_clicks(clicks, h, w)
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    d2 = _min_sq_distance(clicks, h, w)
    values = np.exp(-d2 / (2.0 * sigma * sigma))
    return GuidanceMap(values.astype(np.float32), "gaussian", {"sigma": sigma})


def disk_map(clicks: Sequence[Click], h: int, w: int, radius: float = 5.0) -> GuidanceMap:
    """Binary map, 1 within radius of the nearest click."""
    _check_clicks(clicks, h, w)
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    d2 = _min_sq_distance(clicks, h, w)
    values = (d2 <= radius * radius).astype(np.float32)
    return GuidanceMap(values, "disk", {"radius": radius})


def encode_clicks(kind: str, clicks: Sequence[Click], h: int, w: int, **params) -> GuidanceMap:
    if kind == "euclidean":
        return euclidean_map(clicks, h, w, **params)
    if kind == "gaussian":
        return gaussian_map(clicks, h, w, **params)
    if kind == "disk":
        return disk_map(clicks, h, w, **params)
    raise ValueError(f"unknown guidance kind {kind!r}, expected one of {GUIDANCE_KINDS}")


def resample_map(gmap: GuidanceMap, out_h: int, out_w: int) -> GuidanceMap:
    """Resize with the image: bilinear for continuous maps, nearest for disk."""
    from .imops import resize_bilinear, resize_nearest

    if gmap.kind == "disk":
        values = resize_nearest(gmap.values, out_h, out_w)
    else:
        values = resize_bilinear(gmap.values, out_h, out_w)
    return GuidanceMap(values.astype(np.float32), gmap.kind, dict(gmap.params))


def save_guidance_png(gmap: GuidanceMap, path) -> None:
    """Debug export as an 8-bit grayscale image."""
    from PIL import Image

    arr = np.clip(np.rint(gmap.values * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)
