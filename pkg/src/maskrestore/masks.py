"""Grid-aligned binary mask generation and manipulation.

Masks are ``(H, W)`` float tensors over {0, 1} where 1 marks a visible
pixel and 0 a hidden (to-be-restored) pixel.  Every mask produced here is
constant within each ``k x k`` grid cell, so masks can be decomposed into
and recovered from their per-cell matrices exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

__all__ = [
    "GridSpec",
    "check_scales",
    "sample_random_mask",
    "make_checkerboard_pair",
    "nearest_source_indices",
    "downsample_mask_nearest",
    "apply_mask",
    "make_training_triplet",
]


@dataclass(frozen=True)
class GridSpec:
    """A square grid of ``k x k`` pixel cells tiling an ``h x w`` image.

    Raises:
        ValueError: if ``k < 1`` or ``k`` does not divide both ``h`` and ``w``.
    """

    k: int
    h: int
    w: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"grid cell size must be >= 1, got {self.k}")
        if self.h % self.k != 0 or self.w % self.k != 0:
            raise ValueError(
                f"grid size {self.k} must divide image dims {self.h}x{self.w}"
            )

    @property
    def cells_h(self) -> int:
        return self.h // self.k

    @property
    def cells_w(self) -> int:
        return self.w // self.k

    @property
    def n_cells(self) -> int:
        return self.cells_h * self.cells_w


def check_scales(scales: Sequence[int], h: int, w: int) -> tuple[int, ...]:
    """Validate a set of grid sizes against an image resolution.

    Returns the scales as a tuple, preserving order.  Raises ValueError if
    the set is empty, contains duplicates, or any scale does not tile the
    ``h x w`` image exactly.
    """
    scales = tuple(int(k) for k in scales)
    if not scales:
        raise ValueError("scale set must be non-empty")
    if len(set(scales)) != len(scales):
        raise ValueError(f"scale set has duplicates: {scales}")
    for k in scales:
        GridSpec(k, h, w)  # raises on non-divisors
    return scales


def _cells_to_pixels(cells: np.ndarray, k: int) -> torch.Tensor:
    """Replicate an (H/k, W/k) per-cell matrix to full (H, W) resolution."""
    full = np.repeat(np.repeat(cells, k, axis=0), k, axis=1)
    return torch.from_numpy(np.ascontiguousarray(full, dtype=np.float32))


def sample_random_mask(
    grid: GridSpec,
    p_mask: float,
    rng: int | np.random.Generator,
) -> torch.Tensor:
    """Sample a random grid mask; each cell is hidden with probability ``p_mask``.

    Args:
        grid: grid geometry (validated on construction).
        p_mask: probability that a cell is masked (set to 0), in (0, 1).
        rng: integer seed or a numpy Generator.  Identical seeds yield
            identical masks.

    Returns:
        ``(H, W)`` float32 tensor over {0, 1}, constant per grid cell.
    """
    if not 0.0 < p_mask < 1.0:
        raise ValueError(f"p_mask must be in (0, 1), got {p_mask}")
    gen = np.random.default_rng(rng)
    u = gen.random((grid.cells_h, grid.cells_w))
    cells = (u >= p_mask).astype(np.float32)
    return _cells_to_pixels(cells, grid.k)


def make_checkerboard_pair(grid: GridSpec) -> tuple[torch.Tensor, torch.Tensor]:
    """Build the complementary checkerboard mask pair for a grid.

    Cell ``(r, c)`` of the first mask is visible iff ``r + c`` is even; the
    second mask is its complement, so the pair jointly covers every pixel.
    """
    rows = np.arange(grid.cells_h)[:, None]
    cols = np.arange(grid.cells_w)[None, :]
    cells_a = ((rows + cols) % 2 == 0).astype(np.float32)
    return _cells_to_pixels(cells_a, grid.k), _cells_to_pixels(1.0 - cells_a, grid.k)


def nearest_source_indices(src_len: int, dst_len: int) -> np.ndarray:
    """Source indices picked when downsampling ``src_len`` -> ``dst_len``.

    ``dst_len`` must divide ``src_len``.  Each output position samples the
    center of its source span (round-to-source nearest neighbor).
    """
    if dst_len < 1 or src_len % dst_len != 0:
        raise ValueError(f"target length {dst_len} must divide source {src_len}")
    step = src_len // dst_len
    return np.arange(dst_len) * step + step // 2


def downsample_mask_nearest(
    mask: torch.Tensor, target_h: int, target_w: int
) -> torch.Tensor:
    """Nearest-neighbor downsample of a binary plane to exact-divisor dims.

    Values stay in {0, 1}; a mask that is constant per ``k x k`` cell keeps
    its per-cell structure (and downsampling to ``(H/k, W/k)`` recovers the
    cell matrix exactly).  Accepts ``(H, W)`` planes or batched ``(..., H, W)``.
    """
    h, w = mask.shape[-2], mask.shape[-1]
    idx_r = torch.from_numpy(nearest_source_indices(h, target_h))
    idx_c = torch.from_numpy(nearest_source_indices(w, target_w))
    return mask.index_select(-2, idx_r).index_select(-1, idx_c)


def apply_mask(image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Zero out hidden pixels: the mask is broadcast along the channel dim.

    Args:
        image: ``(C, H, W)`` or ``(B, C, H, W)`` tensor.
        mask: ``(H, W)`` plane, or any shape broadcastable against the image
            after channel alignment (e.g. ``(B, 1, H, W)``).
    """
    if image.shape[-2:] != mask.shape[-2:]:
        raise ValueError(
            f"spatial shapes differ: image {tuple(image.shape)} vs mask {tuple(mask.shape)}"
        )
    return image * mask.to(image.dtype)


def make_training_triplet(
    image: torch.Tensor,
    scales: Sequence[int],
    p_mask: float,
    rng: int | np.random.Generator,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Draw one (masked image, mask, image) training triplet.

    The grid size is drawn uniformly from ``scales``, then a fresh random
    mask is sampled at that scale.  Deterministic given the rng state; the
    returned image is the input tensor itself.
    """
    h, w = image.shape[-2], image.shape[-1]
    scales = check_scales(scales, h, w)
    gen = np.random.default_rng(rng)
    k = scales[int(gen.integers(len(scales)))]
    mask = sample_random_mask(GridSpec(k, h, w), p_mask, gen)
    return apply_mask(image, mask), mask, image
