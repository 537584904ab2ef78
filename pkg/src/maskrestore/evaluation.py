"""ROC-AUC metrics and evaluation-report assembly.

Image-level AUC ranks per-image anomaly scores against labels; pixel-level
AUC pools every pixel of the test split into one labeled set (the common
localization protocol).  Ties get half credit (Mann-Whitney), computed by
sorting in O(n log n).
"""

from __future__ import annotations

import sys
import time
from pathlib import Path

import numpy as np
import torch

from .data import LoadedDataset
from .heatmap import write_heatmap
from .model import RestorationNet
from .refinement import DEFAULT_MAX_ITERS, detect

__all__ = ["UndefinedAucError", "roc_auc", "pixel_auc", "evaluate"]

REPORT_VERSION = 1


class UndefinedAucError(Exception):
    """Raised when a score set contains only one class."""


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve for binary labels, ties at half credit.

    Equals the Mann-Whitney statistic ``P(s_anom > s_norm) + 0.5 * P(tie)``
    over all anomalous/normal pairs, computed via average ranks.

    Args:
        scores: Real-valued anomaly scores.
        labels: Matching 0/1 labels (1 = anomalous).

    Raises:
        UndefinedAucError: If only one class is present.
        ValueError: On length mismatch or non-finite scores.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    if set(np.unique(y)) - {0, 1}:
        raise ValueError("labels must be 0 or 1")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAucError(
            f"AUC undefined: {n_pos} anomalous and {n_neg} normal samples"
        )

    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum_pos = float(ranks[y == 1].sum())
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def pixel_auc(score_maps, gt_masks) -> float:
    """Localization AUC over all pixels of all maps pooled together.

    Args:
        score_maps: Sequence of ``(H, W)`` score maps.
        gt_masks: Matching sequence of binary ground-truth planes
            (1 = anomalous pixel).
    """
    if len(score_maps) != len(gt_masks):
        raise ValueError(f"{len(score_maps)} score maps but {len(gt_masks)} masks")
    if not score_maps:
        raise ValueError("need at least one score map")
    flat_scores, flat_labels = [], []
    for i, (s, m) in enumerate(zip(score_maps, gt_masks)):
        s = s.detach().cpu().numpy() if isinstance(s, torch.Tensor) else np.asarray(s)
        m = m.detach().cpu().numpy() if isinstance(m, torch.Tensor) else np.asarray(m)
        if s.shape != m.shape:
            raise ValueError(f"pair {i}: score map {s.shape} vs mask {m.shape}")
        flat_scores.append(s.ravel())
        flat_labels.append((m.ravel() > 0.5).astype(np.int64))
    return roc_auc(np.concatenate(flat_scores), np.concatenate(flat_labels))


def _auc_or_none(scores, labels) -> float | None:
    try:
        return roc_auc(scores, labels)
    except UndefinedAucError:
        return None


def _pixel_auc_or_none(maps, masks) -> float | None:
    try:
        return pixel_auc(maps, masks)
    except (UndefinedAucError, ValueError):
        return None


def evaluate(
    model: RestorationNet,
    thresholds: dict[int, float],
    dataset: LoadedDataset,
    scales: tuple[int, ...] | list[int],
    max_iters: int = DEFAULT_MAX_ITERS,
    masked_only_score: bool = False,
    progress: bool = False,
    heatmap_dir: str | Path | None = None,
) -> dict:
    """Detect every test image and assemble a JSON-ready report.

    The report carries per-category rows (each defect category ranked
    against the normal test images), their arithmetic mean row, and an
    ``overall`` row pooling the entire split.  Pixel rows appear only when
    ground truth is available.  With ``heatmap_dir``, the final score map
    of each test image is also rendered there.  Timing is printed to
    stderr when ``progress`` is set but never stored, so reports from
    identical inputs are byte-identical.
    """
    started = time.perf_counter()
    if heatmap_dir is not None:
        heatmap_dir = Path(heatmap_dir)
        heatmap_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for rec in dataset.test:
        result = detect(
            model, thresholds, rec.image, scales, max_iters, masked_only_score
        )
        records.append((rec, result))
        if heatmap_dir is not None:
            stem = f"{rec.category}_{rec.path.stem}"
            write_heatmap(result.score_map, heatmap_dir / f"{stem}_score.png")
        if progress:
            print(
                f"[eval] {rec.path.name} ({rec.category}): score={result.score:.5f}",
                file=sys.stderr,
            )

    def rel_id(path: Path) -> str:
        try:
            return path.relative_to(dataset.root).as_posix()
        except ValueError:
            return path.as_posix()

    scores = np.array([r.score for _, r in records])
    labels = np.array([int(rec.is_anomalous) for rec, _ in records])
    normal_idx = [i for i, (rec, _) in enumerate(records) if not rec.is_anomalous]

    categories: dict[str, dict] = {}
    defect_cats = sorted({rec.category for rec, _ in records if rec.is_anomalous})
    for cat in defect_cats:
        cat_idx = [i for i, (rec, _) in enumerate(records) if rec.category == cat]
        pool = cat_idx + normal_idx
        row = {
            "n_images": len(cat_idx),
            "image_auc": _auc_or_none(scores[pool], labels[pool]),
        }
        if dataset.has_gt:
            maps = [records[i][1].score_map for i in pool]
            masks = [
                records[i][0].gt_mask
                if records[i][0].gt_mask is not None
                else torch.zeros_like(records[i][1].score_map)
                for i in pool
            ]
            row["pixel_auc"] = _pixel_auc_or_none(maps, masks)
        categories[cat] = row

    def mean_of(key: str) -> float | None:
        vals = [row.get(key) for row in categories.values()]
        vals = [v for v in vals if v is not None]
        return sum(vals) / len(vals) if vals else None

    overall = {"n_images": len(records), "image_auc": _auc_or_none(scores, labels)}
    mean_row = {"image_auc": mean_of("image_auc")}
    if dataset.has_gt:
        maps = [r.score_map for _, r in records]
        masks = [
            rec.gt_mask if rec.gt_mask is not None else torch.zeros_like(res.score_map)
            for rec, res in records
        ]
        overall["pixel_auc"] = _pixel_auc_or_none(maps, masks)
        mean_row["pixel_auc"] = mean_of("pixel_auc")

    per_image = []
    for rec, res in records:
        per_image.append(
            {
                "id": rel_id(rec.path),
                "category": rec.category,
                "label": int(rec.is_anomalous),
                "score": res.score,
                "scales": {
                    str(s.scale): {
                        "score": s.score,
                        "iterations": s.iterations,
                        "converged": s.converged,
                    }
                    for s in res.states
                },
            }
        )
    per_image.sort(key=lambda row: row["id"])

    iteration_medians = {
        str(k): float(
            np.median([row["scales"][str(k)]["iterations"] for row in per_image])
        )
        for k in scales
    }

    if progress:
        print(f"[eval] finished in {time.perf_counter() - started:.1f}s", file=sys.stderr)

    return {
        "format_version": REPORT_VERSION,
        "dataset": dataset.root.name,
        "resolution": dataset.resolution,
        "scales": [int(k) for k in scales],
        "max_iters": max_iters,
        "masked_only_score": masked_only_score,
        "protocol": {
            "image_auc": "per-image anomaly scores, Mann-Whitney ties at half credit",
            "pixel_auc": "pixels pooled across the whole test split",
            "category_rows": "each defect category ranked against the normal test images",
        },
        "categories": categories,
        "mean": mean_row,
        "overall": overall,
        "median_iterations": iteration_medians,
        "per_image": per_image,
    }
