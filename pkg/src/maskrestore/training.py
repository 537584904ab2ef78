"""Optimization loop and validation-threshold calibration.

Each epoch regenerates a fresh random triplet (masked image, mask, image)
for every training image, steps AdamW with decoupled weight decay on the
weight tensors only, and follows a step-halving learning-rate schedule.
After training, per-scale patch-error thresholds are measured as the
maximum checkerboard-reconstruction error over the validation set.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .masks import GridSpec, apply_mask, check_scales, make_checkerboard_pair, make_training_triplet
from .metrics import GmsConfig, LossWeights, error_map_f, loss_terms
from .model import RestorationNet, compose

__all__ = ["TrainingError", "TrainConfig", "lr_at", "train", "compute_thresholds"]


class TrainingError(Exception):
    """Raised when optimization cannot proceed (e.g. a non-finite loss)."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters.

    Defaults follow the reference recipe: 300 epochs, batch size 8, Adam
    moments (0.9, 0.999) with eps 1e-8, lr 1e-4 halved every 50 epochs,
    decoupled weight decay 1e-5.  Desk-scale runs typically override
    ``epochs`` down to 30-60.
    """

    epochs: int = 300
    batch_size: int = 8
    lr0: float = 1e-4
    lr_halving_period: int = 50
    weight_decay: float = 1e-5
    weights: LossWeights = field(default_factory=LossWeights)
    scales: tuple[int, ...] = (4, 8, 16)
    p_mask: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.lr_halving_period < 1:
            raise ValueError("epochs, batch_size and lr_halving_period must be >= 1")
        if self.lr0 <= 0 or self.weight_decay < 0:
            raise ValueError("lr0 must be > 0 and weight_decay >= 0")
        if not 0.0 < self.p_mask < 1.0:
            raise ValueError(f"p_mask must lie in (0, 1), got {self.p_mask}")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Piecewise-constant schedule: lr0 halved every ``lr_halving_period``."""
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    return cfg.lr0 * 0.5 ** (epoch // cfg.lr_halving_period)


def _param_groups(model: RestorationNet, weight_decay: float) -> list[dict]:
    """Decay weight matrices/kernels; leave biases undecayed."""
    decay, no_decay = [], []
    for _, param in sorted(model.named_parameters()):
        (decay if param.ndim > 1 else no_decay).append(param)
    return [
        {"params": decay, "weight_decay": weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]


def _snapshot(model: RestorationNet) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def train(
    model: RestorationNet,
    images: torch.Tensor,
    cfg: TrainConfig,
    validation: torch.Tensor | None = None,
    log_path: str | Path | None = None,
    log_header: dict | None = None,
    on_epoch_end=None,
) -> tuple[dict[int, float], list[dict]]:
    """Fit the restoration net on normal images; returns thresholds + log.

    Args:
        model: Network to optimize in place.
        images: Normal training images, ``(N, 3, H, W)`` in [0, 1].
        cfg: Hyperparameters; ``cfg.seed`` fixes masks and shuffling, so
            identical inputs give identical final parameters.
        validation: Optional normal images for threshold calibration.
            When omitted, 10% of ``images`` (at least one) is held out
            with a seeded shuffle.
        log_path: Optional JSONL file receiving one record per epoch:
            ``{epoch, lr, mse, gms, ssim, mask, total, wall_time}``.
        log_header: Optional provenance dict written as the log's first
            line.
        on_epoch_end: Optional callback ``(epoch, model)`` invoked after
            each completed epoch (used for periodic checkpoints).

    Returns:
        ``(thresholds, log)`` where thresholds maps each scale in
        ``cfg.scales`` to its validation maximum patch error.

    Raises:
        TrainingError: On an empty dataset or a non-finite loss; in the
            latter case the model is restored to the last completed epoch.
    """
    if images.dim() != 4 or images.shape[0] == 0:
        raise TrainingError("training set must be a non-empty (N, 3, H, W) tensor")
    h, w = images.shape[-2:]
    check_scales(cfg.scales, h, w)

    if validation is None:
        if images.shape[0] < 2:
            raise TrainingError("need at least 2 images to hold out a validation split")
        perm = np.random.default_rng([cfg.seed, 7]).permutation(images.shape[0])
        n_val = max(1, round(0.1 * images.shape[0]))
        validation = images[perm[:n_val]]
        images = images[perm[n_val:]]
    if validation.dim() != 4 or validation.shape[0] == 0:
        raise TrainingError("validation set must be a non-empty (N, 3, H, W) tensor")

    optimizer = torch.optim.AdamW(
        _param_groups(model, cfg.weight_decay), lr=cfg.lr0, betas=(0.9, 0.999), eps=1e-8
    )
    gms_cfg = GmsConfig()
    n = images.shape[0]
    log: list[dict] = []
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    if log_file and log_header:
        log_file.write(json.dumps(log_header, sort_keys=True) + "\n")
    last_good = _snapshot(model)
    try:
        model.train()
        for epoch in range(cfg.epochs):
            started = time.perf_counter()
            lr = lr_at(epoch, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr

            rng = np.random.default_rng([cfg.seed, 101, epoch])
            order = rng.permutation(n)
            sums = {"mse": 0.0, "gms": 0.0, "ssim": 0.0, "mask": 0.0, "total": 0.0}
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                triplets = [
                    make_training_triplet(images[i], cfg.scales, cfg.p_mask, rng) for i in idx
                ]
                masked = torch.stack([t[0] for t in triplets])
                mask = torch.stack([t[1] for t in triplets]).unsqueeze(1)
                target = torch.stack([t[2] for t in triplets])

                optimizer.zero_grad(set_to_none=True)
                restored, mask_pred = model(masked, mask)
                composed = compose(target, restored, mask)
                terms = loss_terms(target, composed, mask, mask_pred, cfg.weights, gms_cfg)
                if not torch.isfinite(terms["total"]):
                    model.load_state_dict(last_good)
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}; "
                        "model restored to the last completed epoch"
                    )
                terms["total"].backward()
                optimizer.step()
                for key in sums:
                    sums[key] += float(terms[key].detach()) * len(idx)

            last_good = _snapshot(model)
            record = {
                "epoch": epoch,
                "lr": lr,
                **{key: sums[key] / n for key in sums},
                "wall_time": time.perf_counter() - started,
            }
            log.append(record)
            if log_file:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
                log_file.flush()
            if on_epoch_end is not None:
                on_epoch_end(epoch, model)
    finally:
        if log_file:
            log_file.close()
        model.eval()

    thresholds = compute_thresholds(model, validation, cfg.scales, batch_size=cfg.batch_size)
    return thresholds, log


def compute_thresholds(
    model: RestorationNet,
    validation: torch.Tensor,
    scales: tuple[int, ...] | list[int],
    batch_size: int = 8,
    gms_cfg: GmsConfig | None = None,
) -> dict[int, float]:
    """Per-scale maximum patch error over checkerboard reconstructions.

    For each scale k, both masks of the checkerboard pair are restored and
    their error maps averaged; the threshold is the maximum k-by-k patch
    mean of that map across every validation image.
    """
    if validation.dim() != 4 or validation.shape[0] == 0:
        raise ValueError("validation set must be a non-empty (N, 3, H, W) tensor")
    h, w = validation.shape[-2:]
    scales = check_scales(scales, h, w)
    gms_cfg = gms_cfg or GmsConfig()

    model.eval()
    thresholds: dict[int, float] = {}
    with torch.inference_mode():
        for k in scales:
            grid = GridSpec(k, h, w)
            worst = 0.0
            for start in range(0, validation.shape[0], batch_size):
                batch = validation[start : start + batch_size]
                maps = []
                for mask in make_checkerboard_pair(grid):
                    mask_b = mask[None, None].expand(batch.shape[0], 1, h, w)
                    restored, _ = model(apply_mask(batch, mask), mask_b)
                    composed = compose(batch, restored, mask_b)
                    maps.append(error_map_f(batch, composed, gms_cfg))
                score = (maps[0] + maps[1]) / 2.0
                patch_means = torch.nn.functional.avg_pool2d(score.unsqueeze(1), k)
                worst = max(worst, float(patch_means.max()))
            thresholds[k] = worst
    return thresholds
