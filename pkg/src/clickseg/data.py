"""Synthetic instance-segmentation corpus and folder-format loader.

Each sample composes 1-3 smooth shapes (ellipses, wobbly blobs, convex
polygons) with pairwise-distinct textures over a textured background. One
shape, drawn topmost, is the designated target and defines the ground-truth
mask. Appearance overlaps between target and clutter keep the task from
degenerating into saliency detection.

Folder layout: images/<id>.png, masks/<id>.png, plus train/val/test.txt
manifests of ids. Masks are single-channel, nonzero meaning foreground.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .imops import resize_bilinear

__all__ = [
    "DatasetSpec",
    "InstanceSample",
    "synthesize_sample",
    "generate",
    "load_folder",
    "split_ranges",
]

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class DatasetSpec:
    n_train: int = 500
    n_val: int = 100
    n_test: int = 100
    size: tuple[int, int] = (64, 64)
    seed: int = 0
    clutter_level: float = 0.5


@dataclass
class InstanceSample:
    """One training/eval unit: image in [0,1], binary target mask, id."""

    image: np.ndarray  # (H, W, 3) float32
    mask: np.ndarray  # (H, W) bool
    id: str

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise ValueError(
                f"sample {self.id}: image {self.image.shape[:2]} and mask "
                f"{self.mask.shape} sizes differ"
            )
        if not self.mask.any():
            raise ValueError(f"sample {self.id}: mask has no foreground")

    def resized(self, h: int, w: int) -> "InstanceSample":
        if self.image.shape[:2] == (h, w):
            return self
        img = resize_bilinear(self.image, h, w).astype(np.float32)
        mask_f = resize_bilinear(self.mask.astype(np.float32), h, w)
        return InstanceSample(np.clip(img, 0.0, 1.0), mask_f >= 0.5, self.id)


def split_ranges(spec: DatasetSpec) -> dict[str, range]:
    """Non-overlapping id ranges per split, fixed by construction."""
    a, b = spec.n_train, spec.n_train + spec.n_val
    return {
        "train": range(0, a),
        "val": range(a, b),
        "test": range(b, b + spec.n_test),
    }


# -- shape rasterizers ---------------------------------------------------------


def _grid(h, w):
    return np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))


def _ellipse_mask(h, w, cx, cy, r0, rng):
    xs, ys = _grid(h, w)
    theta = rng.uniform(0, np.pi)
    q = rng.uniform(0.6, 1.6)
    a, b = r0 * np.sqrt(q), r0 / np.sqrt(q)
    dx, dy = xs - cx, ys - cy
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _blob_mask(h, w, cx, cy, r0, rng):
    xs, ys = _grid(h, w)
    dx, dy = xs - cx, ys - cy
    phi = np.arctan2(dy, dx)
    radius = np.full_like(phi, r0)
    for k in range(2, 5):
        amp = rng.uniform(0.0, 0.25 / (k - 1))
        radius += r0 * amp * np.cos(k * phi + rng.uniform(0, 2 * np.pi))
    return dx * dx + dy * dy <= radius * radius


def _polygon_mask(h, w, cx, cy, r0, rng):
    from matplotlib.path import Path as MplPath

    n_vert = int(rng.integers(5, 9))
    angles = np.sort(rng.uniform(0, 2 * np.pi, n_vert))
    radii = r0 * rng.uniform(0.7, 1.2, n_vert)
    verts = np.stack([cx + radii * np.cos(angles), cy + radii * np.sin(angles)], axis=1)
    xs, ys = _grid(h, w)
    pts = np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)
    return MplPath(verts).contains_points(pts).reshape(h, w)


_SHAPES = (_ellipse_mask, _blob_mask, _polygon_mask)


def _distinct_colors(rng, n, min_dist=0.28):
    colors = []
    for _ in range(200):
        c = rng.uniform(0.08, 0.92, 3)
        if all(np.linalg.norm(c - o) > min_dist for o in colors):
            colors.append(c)
            if len(colors) == n:
                return colors
    raise RuntimeError("could not sample distinct colors")


def _low_freq_field(h, w, rng, cells=4, amp=0.15):
    coarse = rng.uniform(-amp, amp, (cells, cells, 3))
    return resize_bilinear(coarse, h, w)


def synthesize_sample(spec: DatasetSpec, index: int) -> InstanceSample:
    """Deterministic function of (spec, index); the target mask occupies
    between 2% and 60% of the image."""
    h, w = spec.size
    rng = np.random.default_rng([spec.seed, index])
    colors = _distinct_colors(rng, 4)
    bg_color, shape_colors = colors[0], colors[1:]

    image = np.clip(
        bg_color + _low_freq_field(h, w, rng) + rng.normal(0, 0.03, (h, w, 3)), 0, 1
    )

    n_distractors = int(rng.binomial(2, spec.clutter_level))
    for d in range(n_distractors):
        raster = _SHAPES[int(rng.integers(len(_SHAPES)))]
        af = rng.uniform(0.03, 0.25)
        r0 = np.sqrt(af * h * w / np.pi)
        cx, cy = rng.uniform(0.2 * w, 0.8 * w), rng.uniform(0.2 * h, 0.8 * h)
        m = raster(h, w, cx, cy, r0, rng)
        tex = shape_colors[d] + _low_freq_field(h, w, rng, amp=0.1) + rng.normal(0, 0.03, (h, w, 3))
        image[m] = np.clip(tex, 0, 1)[m]

    target = None
    for _ in range(30):
        raster = _SHAPES[int(rng.integers(len(_SHAPES)))]
        af = rng.uniform(0.08, 0.40)
        r0 = np.sqrt(af * h * w / np.pi)
        cx, cy = rng.uniform(0.3 * w, 0.7 * w), rng.uniform(0.3 * h, 0.7 * h)
        m = raster(h, w, cx, cy, r0, rng)
        frac = m.mean()
        if 0.02 <= frac <= 0.60:
            target = m
            break
    if target is None:
        raise RuntimeError(f"sample {index}: no target satisfying area bounds after 30 tries")

    tex = shape_colors[2] + _low_freq_field(h, w, rng, amp=0.1) + rng.normal(0, 0.03, (h, w, 3))
    image[target] = np.clip(tex, 0, 1)[target]

    return InstanceSample(image.astype(np.float32), target, f"{index:06d}")


# -- folder IO -----------------------------------------------------------------


def _save_png(arr: np.ndarray, path: Path) -> None:
    Image.fromarray(arr).save(path)


def generate(spec: DatasetSpec, out_dir) -> Path:
    """Write the corpus; a fixed spec (seed included) reproduces byte-identical
    trees."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    ranges = split_ranges(spec)
    for split, ids in ranges.items():
        names = []
        for index in ids:
            sample = synthesize_sample(spec, index)
            img8 = np.clip(np.rint(sample.image * 255.0), 0, 255).astype(np.uint8)
            _save_png(img8, out / "images" / f"{sample.id}.png")
            _save_png(sample.mask.astype(np.uint8) * 255, out / "masks" / f"{sample.id}.png")
            names.append(sample.id)
        (out / f"{split}.txt").write_text("\n".join(names) + "\n")
    return out


def _read_image(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0


def _read_mask(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) != 0


def load_folder(path, split: Optional[str] = None) -> list[InstanceSample]:
    """Pair images with masks by shared stem; optionally restrict to a split
    manifest."""
    root = Path(path)
    img_dir, mask_dir = root / "images", root / "masks"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise FileNotFoundError(f"{root}: expected images/ and masks/ subdirectories")

    image_stems = {p.stem: p for p in sorted(img_dir.glob("*.png"))}
    mask_stems = {p.stem: p for p in sorted(mask_dir.glob("*.png"))}

    if split is not None:
        manifest = root / f"{split}.txt"
        if not manifest.is_file():
            raise FileNotFoundError(f"{root}: missing split manifest {split}.txt")
        wanted = [line for line in manifest.read_text().split() if line]
    else:
        wanted = sorted(image_stems)
        stray = sorted(set(mask_stems) - set(image_stems))
        if stray:
            raise ValueError(f"{root}: mask without matching image for stem {stray[0]!r}")

    samples = []
    for stem in wanted:
        if stem not in image_stems:
            raise ValueError(f"{root}: missing image for stem {stem!r}")
        if stem not in mask_stems:
            raise ValueError(f"{root}: missing mask for stem {stem!r}")
        image = _read_image(image_stems[stem])
        mask = _read_mask(mask_stems[stem])
        if image.shape[:2] != mask.shape:
            raise ValueError(
                f"{root}: size mismatch for stem {stem!r}: "
                f"image {image.shape[:2]} vs mask {mask.shape}"
            )
        samples.append(InstanceSample(image, mask, stem))
    return samples
