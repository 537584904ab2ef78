"""Procedural synthetic corpus with exact ground-truth defect masks.

Three texture families (stripes, checker, value-noise) provide normal
images; defects (blob, scratch, color-patch) are composited onto test
images together with pixel-exact ground-truth masks.  Everything is
deterministic per seed, so regenerating a corpus reproduces it byte for
byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import MASK_SUFFIX, NORMAL_CATEGORY, save_image_png

__all__ = ["TEXTURES", "DEFECTS", "SynthSpec", "generate_synthetic"]

TEXTURES = ("stripes", "checker", "value-noise")
DEFECTS = ("blob", "scratch", "color-patch")

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one generated corpus."""

    texture: str = "stripes"
    resolution: int = 64
    defects: tuple[str, ...] = DEFECTS
    defect_size: tuple[int, int] = (12, 22)
    n_train: int = 200
    n_validation: int = 20
    n_test: int = 60
    seed: int = 0

    def __post_init__(self) -> None:
        if self.texture not in TEXTURES:
            raise ValueError(f"unknown texture {self.texture!r}, choose from {TEXTURES}")
        unknown = [d for d in self.defects if d not in DEFECTS]
        if unknown or not self.defects:
            raise ValueError(f"unknown defect types {unknown}, choose from {DEFECTS}")
        if self.resolution < 16:
            raise ValueError(f"resolution must be at least 16, got {self.resolution}")
        lo, hi = self.defect_size
        if not (2 <= lo <= hi <= self.resolution):
            raise ValueError(
                f"defect size range {self.defect_size} must satisfy 2 <= lo <= hi <= resolution"
            )
        if min(self.n_train, self.n_validation, self.n_test) < 1:
            raise ValueError("every split needs at least one image")


def _coords(res: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:res, 0:res]
    return ys.astype(np.float64), xs.astype(np.float64)


def _blend(c0: np.ndarray, c1: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Mix two RGB colors by a (H, W) weight plane; returns (3, H, W)."""
    return c0[:, None, None] * (1.0 - t) + c1[:, None, None] * t


def _texture_stripes(rng: np.random.Generator, res: int) -> np.ndarray:
    angle = np.deg2rad(35.0 + rng.uniform(-5.0, 5.0))
    wavelength = rng.uniform(10.0, 14.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    ys, xs = _coords(res)
    t = 0.5 + 0.5 * np.sin(2.0 * np.pi * (xs * np.cos(angle) + ys * np.sin(angle)) / wavelength + phase)
    c0 = np.array([0.30, 0.35, 0.55]) + rng.uniform(-0.04, 0.04, size=3)
    c1 = np.array([0.75, 0.80, 0.88]) + rng.uniform(-0.04, 0.04, size=3)
    return _blend(c0, c1, t)


def _texture_checker(rng: np.random.Generator, res: int) -> np.ndarray:
    cell = 8.0
    ox = rng.uniform(0.0, cell)
    oy = rng.uniform(0.0, cell)
    sharp = 3.0
    ys, xs = _coords(res)
    wave_x = np.tanh(np.sin(2.0 * np.pi * (xs + ox) / (2.0 * cell)) * sharp)
    wave_y = np.tanh(np.sin(2.0 * np.pi * (ys + oy) / (2.0 * cell)) * sharp)
    t = 0.5 + 0.5 * wave_x * wave_y / np.tanh(sharp) ** 2
    c0 = np.array([0.25, 0.45, 0.35]) + rng.uniform(-0.04, 0.04, size=3)
    c1 = np.array([0.80, 0.75, 0.60]) + rng.uniform(-0.04, 0.04, size=3)
    return _blend(c0, c1, np.clip(t, 0.0, 1.0))


def _texture_value_noise(rng: np.random.Generator, res: int) -> np.ndarray:
    step = 16
    nodes = res // step + 2
    lattice = rng.uniform(0.0, 1.0, size=(nodes, nodes))
    pos = np.arange(res, dtype=np.float64) / step
    i0 = np.floor(pos).astype(int)
    frac = pos - i0
    fy, fx = frac[:, None], frac[None, :]
    iy, ix = i0[:, None], i0[None, :]
    t = (
        lattice[iy, ix] * (1 - fy) * (1 - fx)
        + lattice[iy, ix + 1] * (1 - fy) * fx
        + lattice[iy + 1, ix] * fy * (1 - fx)
        + lattice[iy + 1, ix + 1] * fy * fx
    )
    c0 = np.array([0.20, 0.30, 0.50]) + rng.uniform(-0.04, 0.04, size=3)
    c1 = np.array([0.70, 0.80, 0.75]) + rng.uniform(-0.04, 0.04, size=3)
    return _blend(c0, c1, t)


_TEXTURE_FNS = {
    "stripes": _texture_stripes,
    "checker": _texture_checker,
    "value-noise": _texture_value_noise,
}


def _contrast_color(rng: np.random.Generator, region_mean: np.ndarray) -> np.ndarray:
    """Pick a flat color far from the covered region's mean, per channel."""
    dark = rng.uniform(0.02, 0.18, size=3)
    bright = rng.uniform(0.82, 0.98, size=3)
    return np.where(region_mean > 0.5, dark, bright)


def _defect_blob(rng: np.random.Generator, res: int, size: tuple[int, int]) -> np.ndarray:
    radius = rng.uniform(size[0], size[1]) / 2.0
    margin = int(np.ceil(radius)) + 2
    cy = rng.uniform(margin, res - margin)
    cx = rng.uniform(margin, res - margin)
    ys, xs = _coords(res)
    return ((ys - cy) ** 2 + (xs - cx) ** 2 <= radius**2).astype(bool)


def _defect_scratch(rng: np.random.Generator, res: int, size: tuple[int, int]) -> np.ndarray:
    length = rng.uniform(size[0], size[1]) * 1.3
    width = 3.0
    angle = rng.uniform(0.0, np.pi)
    dy, dx = np.sin(angle) * length / 2.0, np.cos(angle) * length / 2.0
    margin = max(abs(dy), abs(dx)) + width + 2.0
    margin = min(margin, res / 2.0 - 1.0)
    cy = rng.uniform(margin, res - margin)
    cx = rng.uniform(margin, res - margin)
    y0, x0, y1, x1 = cy - dy, cx - dx, cy + dy, cx + dx
    ys, xs = _coords(res)
    seg_y, seg_x = y1 - y0, x1 - x0
    seg_len2 = max(seg_y**2 + seg_x**2, 1e-12)
    t = np.clip(((ys - y0) * seg_y + (xs - x0) * seg_x) / seg_len2, 0.0, 1.0)
    dist2 = (ys - (y0 + t * seg_y)) ** 2 + (xs - (x0 + t * seg_x)) ** 2
    return (dist2 <= (width / 2.0) ** 2).astype(bool)


def _defect_color_patch(rng: np.random.Generator, res: int, size: tuple[int, int]) -> np.ndarray:
    h = int(round(rng.uniform(size[0], size[1])))
    w = int(round(rng.uniform(size[0], size[1])))
    y0 = int(rng.integers(2, res - h - 1))
    x0 = int(rng.integers(2, res - w - 1))
    mask = np.zeros((res, res), dtype=bool)
    mask[y0 : y0 + h, x0 : x0 + w] = True
    return mask


_DEFECT_FNS = {
    "blob": _defect_blob,
    "scratch": _defect_scratch,
    "color-patch": _defect_color_patch,
}


def _make_normal(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    img = _TEXTURE_FNS[spec.texture](rng, spec.resolution)
    img = img * rng.uniform(0.95, 1.05)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _make_defective(
    spec: SynthSpec, defect: str, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    img = _make_normal(spec, rng).astype(np.float64)
    mask = _DEFECT_FNS[defect](rng, spec.resolution, spec.defect_size)
    if not mask.any():
        raise RuntimeError(f"degenerate {defect} rasterized to an empty mask")
    color = _contrast_color(rng, img[:, mask].mean(axis=1))
    img[:, mask] = color[:, None]
    return np.clip(img, 0.0, 1.0).astype(np.float32), mask


def _save_mask_png(path: Path, mask: np.ndarray) -> None:
    save_image_png(path, mask.astype(np.float32))


def generate_synthetic(spec: SynthSpec, out_root: str | Path) -> dict:
    """Write a full corpus under ``out_root`` and return a summary dict.

    Layout matches :mod:`maskrestore.data`: normal images in
    ``train/good`` and ``validation/good``; the test split is half normal
    (``test/good``) and half defective, cycling through ``spec.defects``
    with exact masks under ``ground_truth/<defect>/``.
    """
    out_root = Path(out_root)
    n_good_test = spec.n_test // 2
    n_defective = spec.n_test - n_good_test

    for split, count, tag in (("train", spec.n_train, 0), ("validation", spec.n_validation, 1)):
        split_dir = out_root / split / NORMAL_CATEGORY
        split_dir.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            rng = np.random.default_rng([spec.seed, tag, i])
            save_image_png(split_dir / f"{i:03d}.png", _make_normal(spec, rng))

    good_dir = out_root / "test" / NORMAL_CATEGORY
    good_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n_good_test):
        rng = np.random.default_rng([spec.seed, 2, i])
        save_image_png(good_dir / f"{i:03d}.png", _make_normal(spec, rng))

    per_category: dict[str, int] = {NORMAL_CATEGORY: n_good_test}
    for j in range(n_defective):
        defect = spec.defects[j % len(spec.defects)]
        index = per_category.get(defect, 0)
        per_category[defect] = index + 1
        img_dir = out_root / "test" / defect
        gt_dir = out_root / "ground_truth" / defect
        img_dir.mkdir(parents=True, exist_ok=True)
        gt_dir.mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng([spec.seed, 3, j])
        img, mask = _make_defective(spec, defect, rng)
        save_image_png(img_dir / f"{index:03d}.png", img)
        _save_mask_png(gt_dir / f"{index:03d}{MASK_SUFFIX}.png", mask)

    summary = {
        "format_version": MANIFEST_VERSION,
        "texture": spec.texture,
        "resolution": spec.resolution,
        "defects": list(spec.defects),
        "defect_size": list(spec.defect_size),
        "seed": spec.seed,
        "counts": {
            "train": spec.n_train,
            "validation": spec.n_validation,
            "test": per_category,
        },
    }
    with open(out_root / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
