"""Anomaly detection by progressive mask refinement.

Detection starts from a score map averaged over checkerboard restorations
at every scale, then, per scale, alternates two moves until the mask stops
changing: hide every grid patch whose mean error exceeds the calibrated
threshold, and re-restore the image under that mask.  A defect can never
be copied through the mask, so its restoration error persists while
normal regions fall quiet.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .masks import GridSpec, apply_mask, check_scales, make_checkerboard_pair
from .metrics import GmsConfig, error_map_f
from .model import RestorationNet, compose

__all__ = [
    "RefinementState",
    "DetectionResult",
    "initialize_scores",
    "refine_mask",
    "progressive_refinement",
    "detect",
]

DEFAULT_MAX_ITERS = 10


@dataclass(frozen=True)
class RefinementState:
    """Outcome of progressive refinement at one scale."""

    scale: int
    mask: torch.Tensor
    scores: torch.Tensor
    iterations: int
    converged: bool
    score: float

    def __post_init__(self) -> None:
        if self.score < 0.0:
            raise ValueError(f"scalar score must be non-negative, got {self.score}")


@dataclass(frozen=True)
class DetectionResult:
    """Multi-scale detection output for one image."""

    states: tuple[RefinementState, ...]
    score_map: torch.Tensor
    score: float


def _forward_error(
    model: RestorationNet,
    image: torch.Tensor,
    masks: torch.Tensor,
    gms_cfg: GmsConfig,
) -> torch.Tensor:
    """Restore ``image`` under each mask; return per-mask error maps.

    ``masks`` is ``(B, H, W)``; the single image is broadcast across the
    batch.  Returns ``(B, H, W)`` maps of f(I, composed restoration).
    """
    batch = image.unsqueeze(0).expand(masks.shape[0], -1, -1, -1)
    mask_b = masks.unsqueeze(1)
    restored, _ = model(apply_mask(batch, mask_b), mask_b)
    composed = compose(batch, restored, mask_b)
    return error_map_f(batch, composed, gms_cfg)


def initialize_scores(
    model: RestorationNet,
    image: torch.Tensor,
    scales: tuple[int, ...] | list[int],
    gms_cfg: GmsConfig | None = None,
) -> torch.Tensor:
    """Initial score map: mean error over all checkerboard restorations.

    Every scale contributes its complementary mask pair (2·|scales|
    forward passes, run as one batch), so each pixel is hidden exactly
    once per scale.

    Args:
        image: ``(3, H, W)`` image at the model resolution.
        scales: Grid cell sizes; each must divide H and W.

    Returns:
        ``(H, W)`` non-negative score map.
    """
    if image.dim() != 3:
        raise ValueError(f"expected a (3, H, W) image, got shape {tuple(image.shape)}")
    h, w = image.shape[-2:]
    scales = check_scales(scales, h, w)
    gms_cfg = gms_cfg or GmsConfig()

    masks = []
    for k in scales:
        masks.extend(make_checkerboard_pair(GridSpec(k, h, w)))
    model.eval()
    with torch.inference_mode():
        maps = _forward_error(model, image, torch.stack(masks), gms_cfg)
    return maps.mean(dim=0)


def refine_mask(scores: torch.Tensor, grid: GridSpec, threshold: float) -> torch.Tensor:
    """Hide every grid patch whose mean score exceeds ``threshold``.

    Args:
        scores: ``(H, W)`` non-negative score map.
        grid: Patch geometry; ``grid.h``/``grid.w`` must match the map.
        threshold: Patch-mean error bound (strict: equality stays visible).

    Returns:
        ``(H, W)`` float mask over {0, 1}, constant within each patch.
    """
    if scores.dim() != 2:
        raise ValueError(f"score map must be (H, W), got shape {tuple(scores.shape)}")
    if scores.shape != (grid.h, grid.w):
        raise ValueError(
            f"score map {tuple(scores.shape)} does not match grid {(grid.h, grid.w)}"
        )
    patch_means = torch.nn.functional.avg_pool2d(scores[None, None], grid.k)[0, 0]
    visible = (patch_means <= threshold).to(scores.dtype)
    return visible.repeat_interleave(grid.k, dim=0).repeat_interleave(grid.k, dim=1)


def progressive_refinement(
    model: RestorationNet,
    image: torch.Tensor,
    scale: int,
    threshold: float,
    init_scores: torch.Tensor,
    max_iters: int = DEFAULT_MAX_ITERS,
    masked_only_score: bool = False,
    gms_cfg: GmsConfig | None = None,
) -> RefinementState:
    """Iterate mask refinement at one scale until the mask fixes itself.

    Each iteration re-thresholds the current score map into a mask, then
    restores the image under that mask to produce the next map.  The loop
    stops as soon as two consecutive masks are identical (the state is
    then a fixed point: one more iteration would reproduce it exactly) or
    after ``max_iters`` iterations with ``converged=False``.

    The scalar score divides the score-map sum by the count of visible
    pixels (clamped to at least 1); with ``masked_only_score`` the
    numerator is restricted to hidden pixels instead of the whole map.
    """
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    if threshold < 0.0 or not torch.isfinite(torch.tensor(threshold)):
        raise ValueError(f"threshold must be finite and non-negative, got {threshold}")
    h, w = image.shape[-2:]
    grid = GridSpec(scale, h, w)
    gms_cfg = gms_cfg or GmsConfig()

    scores = init_scores
    mask_prev: torch.Tensor | None = None
    mask = torch.ones_like(init_scores)
    converged = False
    iterations = 0
    model.eval()
    with torch.inference_mode():
        while iterations < max_iters:
            mask = refine_mask(scores, grid, threshold)
            iterations += 1
            if mask_prev is not None and torch.equal(mask, mask_prev):
                converged = True
                break
            scores = _forward_error(model, image, mask.unsqueeze(0), gms_cfg)[0]
            mask_prev = mask

    numerator = scores * (1.0 - mask) if masked_only_score else scores
    score = float(numerator.sum() / torch.clamp_min(mask.sum(), 1.0))
    return RefinementState(
        scale=scale,
        mask=mask,
        scores=scores,
        iterations=iterations,
        converged=converged,
        score=score,
    )


def detect(
    model: RestorationNet,
    thresholds: dict[int, float],
    image: torch.Tensor,
    scales: tuple[int, ...] | list[int],
    max_iters: int = DEFAULT_MAX_ITERS,
    masked_only_score: bool = False,
    gms_cfg: GmsConfig | None = None,
) -> DetectionResult:
    """Full multi-scale detection of one image.

    Runs :func:`initialize_scores` once, refines per scale from that
    shared starting map, and averages: the final score map is the
    pixelwise mean of the per-scale maps, the final scalar the mean of
    the per-scale scores.

    Raises:
        KeyError: If a requested scale has no calibrated threshold.
    """
    h, w = image.shape[-2:]
    scales = check_scales(scales, h, w)
    missing = [k for k in scales if k not in thresholds]
    if missing:
        raise KeyError(f"no threshold calibrated for scales {missing}")
    gms_cfg = gms_cfg or GmsConfig()

    init = initialize_scores(model, image, scales, gms_cfg)
    states = tuple(
        progressive_refinement(
            model, image, k, thresholds[k], init, max_iters, masked_only_score, gms_cfg
        )
        for k in scales
    )
    score_map = torch.stack([s.scores for s in states]).mean(dim=0)
    score = float(sum(s.score for s in states) / len(states))
    return DetectionResult(states=states, score_map=score_map, score=score)
