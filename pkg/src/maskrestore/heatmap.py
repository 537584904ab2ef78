"""Score-map rendering: 16-bit grayscale, false color, and a sidecar JSON.

The grayscale PNG is the quantitative artifact; the sidecar records the
affine mapping (mode and bounds) needed to recover scores from pixel
values, so files stay self-describing.  The false-color PNG is for eyes
only.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from matplotlib import colormaps
from PIL import Image

__all__ = ["SCORE_UPPER_BOUND", "write_heatmap"]

# error_map_f is a sum of a squared difference in [0, 1], a gradient
# dissimilarity in [0, 1], and a structural dissimilarity in [0, 2].
SCORE_UPPER_BOUND = 4.0

SIDECAR_VERSION = 1
COLORMAP = "jet"


def write_heatmap(
    scores: torch.Tensor | np.ndarray,
    path: str | Path,
    normalize: bool = True,
) -> dict:
    """Render a ``(H, W)`` score map to PNG files next to ``path``.

    Writes three files: ``path`` itself as a 16-bit grayscale PNG,
    ``<stem>_color.png`` as an 8-bit false-color rendering, and
    ``<stem>.json`` recording the value mapping.

    Args:
        scores: Finite score map, shape ``(H, W)``.
        path: Grayscale PNG destination; must end in ``.png``.
        normalize: Min-max scale so min maps to 0 and max to 65535.  When
            false, the fixed range [0, SCORE_UPPER_BOUND] is used instead
            (values outside are clipped).

    Returns:
        Dict with the written file paths and the recorded bounds.
    """
    arr = scores.detach().cpu().numpy() if isinstance(scores, torch.Tensor) else np.asarray(scores)
    arr = arr.astype(np.float64)
    if arr.ndim != 2:
        raise ValueError(f"score map must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("score map contains non-finite values")
    path = Path(path)
    if path.suffix.lower() != ".png":
        raise ValueError(f"heatmap path must end in .png, got {path.name}")

    if normalize:
        lo, hi = float(arr.min()), float(arr.max())
        mode = "minmax"
    else:
        lo, hi = 0.0, SCORE_UPPER_BOUND
        mode = "fixed"
    span = hi - lo
    if span > 0.0:
        normed = np.clip((arr - lo) / span, 0.0, 1.0)
    else:
        normed = np.zeros_like(arr)

    gray = np.round(normed * 65535.0).astype(np.uint16)
    Image.fromarray(gray).save(path)

    color_path = path.with_name(path.stem + "_color.png")
    rgba = colormaps[COLORMAP](normed)
    rgb = np.round(rgba[..., :3] * 255.0).astype(np.uint8)
    Image.fromarray(rgb).save(color_path)

    sidecar_path = path.with_suffix(".json")
    sidecar = {
        "format_version": SIDECAR_VERSION,
        "mode": mode,
        "lo": lo,
        "hi": hi,
        "shape": list(arr.shape),
        "grayscale_png": path.name,
        "color_png": color_path.name,
        "colormap": COLORMAP,
    }
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return {"grayscale": path, "color": color_path, "sidecar": sidecar_path, "lo": lo, "hi": hi}
