"""Dataset ingestion for the category-per-folder directory layout.

Expected structure::

    root/
      train/good/*.png
      validation/good/*.png
      test/good/*.png
      test/<defect-type>/*.png
      ground_truth/<defect-type>/<stem>_mask.png

Train and validation hold only normal images.  When a ``ground_truth``
directory exists, every anomalous test image must have a matching mask;
without one, the dataset is treated as labels-only and pixel-level
evaluation is skipped.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

__all__ = [
    "DataError",
    "ImageRecord",
    "LoadedDataset",
    "load_image",
    "load_mask",
    "save_image_png",
    "load_dataset",
]

NORMAL_CATEGORY = "good"
MASK_SUFFIX = "_mask"


class DataError(Exception):
    """Raised for missing, empty, or inconsistent dataset contents."""


@dataclass(frozen=True)
class ImageRecord:
    """One test/train image with its label and optional ground truth."""

    path: Path
    category: str
    image: torch.Tensor
    gt_mask: torch.Tensor | None = None

    @property
    def is_anomalous(self) -> bool:
        return self.category != NORMAL_CATEGORY


@dataclass(frozen=True)
class LoadedDataset:
    root: Path
    resolution: int
    categories: tuple[str, ...]
    train: tuple[ImageRecord, ...]
    validation: tuple[ImageRecord, ...]
    test: tuple[ImageRecord, ...]
    has_gt: bool

    def stack(self, split: str) -> torch.Tensor:
        """Stack a split's images into one ``(N, 3, H, W)`` tensor."""
        records = getattr(self, split)
        return torch.stack([r.image for r in records])


def load_image(path: str | Path, resolution: int | None = None) -> torch.Tensor:
    """Decode a PNG into a ``(3, H, W)`` float tensor in [0, 1].

    Grayscale inputs are replicated to three identical channels.  With
    ``resolution`` set, the image is bilinearly resized to a square of that
    size; otherwise sizes pass through untouched.
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            if resolution is not None and img.size != (resolution, resolution):
                img = img.resize((resolution, resolution), Image.BILINEAR)
            arr = np.asarray(img, dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def load_mask(path: str | Path, resolution: int | None = None) -> torch.Tensor:
    """Decode a ground-truth mask into a binary ``(H, W)`` float tensor.

    Values are binarized at 0.5 after scaling to [0, 1]; anomalous pixels
    are 1.
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            img = img.convert("L")
            if resolution is not None and img.size != (resolution, resolution):
                img = img.resize((resolution, resolution), Image.NEAREST)
            arr = np.asarray(img, dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode mask {path}: {exc}") from exc
    return torch.from_numpy((arr > 0.5).astype(np.float32))


def save_image_png(path: str | Path, image: torch.Tensor | np.ndarray) -> None:
    """Write a ``(3, H, W)`` or ``(H, W)`` float array in [0, 1] as 8-bit PNG."""
    arr = image.detach().cpu().numpy() if isinstance(image, torch.Tensor) else np.asarray(image)
    arr = np.clip(arr, 0.0, 1.0)
    if arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data).save(Path(path))


def _list_pngs(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")


def _require_dir(directory: Path) -> Path:
    if not directory.is_dir():
        raise DataError(f"missing dataset directory: {directory}")
    return directory


def load_dataset(root: str | Path, resolution: int) -> LoadedDataset:
    """Load every split of a category-per-folder dataset into memory.

    Ordering is lexicographic by path within each split, so identical
    directories always yield identical tensor sequences.

    Raises:
        DataError: On missing directories, empty splits, undecodable
            files, or anomalous test images lacking a ground-truth mask
            while a ``ground_truth`` directory exists.
    """
    root = Path(root)
    _require_dir(root)
    if resolution < 8:
        raise ValueError(f"resolution must be at least 8, got {resolution}")

    def load_split(split: str) -> list[ImageRecord]:
        split_dir = _require_dir(root / split / NORMAL_CATEGORY)
        paths = _list_pngs(split_dir)
        if not paths:
            raise DataError(f"no images in {split_dir}")
        return [ImageRecord(p, NORMAL_CATEGORY, load_image(p, resolution)) for p in paths]

    train = load_split("train")
    validation = load_split("validation")

    test_dir = _require_dir(root / "test")
    category_dirs = sorted(d for d in test_dir.iterdir() if d.is_dir())
    if not category_dirs:
        raise DataError(f"no category directories in {test_dir}")

    gt_root = root / "ground_truth"
    has_gt = gt_root.is_dir()

    test: list[ImageRecord] = []
    categories: list[str] = []
    for cat_dir in category_dirs:
        category = cat_dir.name
        paths = _list_pngs(cat_dir)
        if not paths:
            raise DataError(f"no images in {cat_dir}")
        categories.append(category)
        for p in paths:
            gt = None
            if category != NORMAL_CATEGORY and has_gt:
                mask_path = gt_root / category / f"{p.stem}{MASK_SUFFIX}.png"
                if not mask_path.is_file():
                    raise DataError(f"missing ground-truth mask for {p}: expected {mask_path}")
                gt = load_mask(mask_path, resolution)
            test.append(ImageRecord(p, category, load_image(p, resolution), gt))

    return LoadedDataset(
        root=root,
        resolution=resolution,
        categories=tuple(categories),
        train=tuple(train),
        validation=tuple(validation),
        test=tuple(test),
        has_gt=has_gt,
    )
