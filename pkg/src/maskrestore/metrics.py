"""Differentiable image similarity metrics and training losses.

All map functions accept single images ``(C, H, W)`` or batches
``(B, C, H, W)`` and return per-pixel planes of matching batchedness
(``(H, W)`` or ``(B, H, W)``).  Everything is written in torch ops so the
losses are differentiable with respect to the reconstruction; dtype follows
the inputs (use float64 tensors for high-precision checks).

Conventions fixed here:
  * Prewitt kernels are scaled by 1/3 so gradient magnitudes stay in
    [0, sqrt(2)] for inputs in [0, 1].
  * The gradient-similarity stability constant defaults to 0.0026, the
    usual 170 constant rescaled from a 255^2 dynamic range to 1.
  * SSIM uses an 11x11 Gaussian window (sigma 1.5) with C1 = 0.01^2 and
    C2 = 0.03^2 on [0, 1] images.
  * All windowed ops use replicate border padding, so every map has the
    same spatial size as its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

__all__ = [
    "GmsConfig",
    "LossWeights",
    "mse_map",
    "mse_loss",
    "gradient_magnitude",
    "gms_map",
    "gms_loss",
    "ssim_map",
    "ssim_loss",
    "error_map_f",
    "mask_loss",
    "loss_terms",
    "total_loss",
]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _prewitt_x() -> np.ndarray:
    return np.array(
        [[1.0, 0.0, -1.0], [1.0, 0.0, -1.0], [1.0, 0.0, -1.0]], dtype=np.float64
    ) / 3.0


@dataclass(frozen=True)
class GmsConfig:
    """Gradient-magnitude similarity parameters.

    ``stability`` keeps the similarity ratio finite; ``sqrt_eps`` is added
    under the magnitude square root so its gradient is defined (and zero)
    on perfectly flat regions instead of NaN.
    """

    stability: float = 0.0026
    sqrt_eps: float = 1e-20
    prewitt_x: np.ndarray = field(default_factory=_prewitt_x)

    def __post_init__(self) -> None:
        if self.stability <= 0:
            raise ValueError("stability constant must be > 0")

    @property
    def prewitt_y(self) -> np.ndarray:
        return self.prewitt_x.T


@dataclass(frozen=True)
class LossWeights:
    """Weights for the four training loss terms (all default to 1)."""

    mse: float = 1.0
    gms: float = 1.0
    ssim: float = 1.0
    mask: float = 1.0

    def __post_init__(self) -> None:
        vals = (self.mse, self.gms, self.ssim, self.mask)
        if any(v < 0 for v in vals):
            raise ValueError(f"loss weights must be >= 0, got {vals}")
        if all(v == 0 for v in vals):
            raise ValueError("at least one loss weight must be positive")


def _batched(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.dim() == 3:
        return x.unsqueeze(0), True
    if x.dim() == 4:
        return x, False
    raise ValueError(f"expected (C, H, W) or (B, C, H, W), got {tuple(x.shape)}")


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def _conv_replicate(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    """Per-channel 2-D correlation with replicate padding, same output size."""
    pad = kernel.shape[-1] // 2
    c = x.shape[1]
    weight = kernel.to(x.dtype).expand(c, 1, *kernel.shape[-2:])
    padded = F.pad(x, (pad, pad, pad, pad), mode="replicate")
    return F.conv2d(padded, weight, groups=c)


def mse_map(image: torch.Tensor, recon: torch.Tensor) -> torch.Tensor:
    """Per-pixel squared error, averaged over channels."""
    _check_pair(image, recon)
    a, squeeze = _batched(image)
    b, _ = _batched(recon)
    out = ((a - b) ** 2).mean(dim=1)
    return out.squeeze(0) if squeeze else out


def mse_loss(image: torch.Tensor, recon: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all pixels and channels."""
    _check_pair(image, recon)
    return ((image - recon) ** 2).mean()


def gradient_magnitude(
    plane: torch.Tensor, cfg: GmsConfig | None = None
) -> torch.Tensor:
    """Prewitt gradient magnitude of a single-channel plane.

    Accepts ``(H, W)`` or batched ``(..., H, W)``; returns the same shape.
    """
    cfg = cfg or GmsConfig()
    shape = plane.shape
    x = plane.reshape(-1, 1, *shape[-2:])
    g = _grad_mag(x, cfg)
    return g.reshape(shape)


def _grad_mag(x: torch.Tensor, cfg: GmsConfig) -> torch.Tensor:
    """Gradient magnitude of (B, C, H, W), per channel."""
    kx = torch.from_numpy(cfg.prewitt_x)
    ky = torch.from_numpy(np.ascontiguousarray(cfg.prewitt_y))
    gx = _conv_replicate(x, kx)
    gy = _conv_replicate(x, ky)
    return torch.sqrt(gx * gx + gy * gy + cfg.sqrt_eps)


def gms_map(
    image: torch.Tensor, recon: torch.Tensor, cfg: GmsConfig | None = None
) -> torch.Tensor:
    """Gradient-magnitude similarity map in (0, 1], averaged over channels.

    Symmetric in its arguments; equals 1 wherever the two gradient fields
    agree (including on jointly flat regions, where the stability constant
    dominates).
    """
    cfg = cfg or GmsConfig()
    _check_pair(image, recon)
    a, squeeze = _batched(image)
    b, _ = _batched(recon)
    ga = _grad_mag(a, cfg)
    gb = _grad_mag(b, cfg)
    c = cfg.stability
    sim = (2.0 * ga * gb + c) / (ga * ga + gb * gb + c)
    out = sim.mean(dim=1)
    return out.squeeze(0) if squeeze else out


def gms_loss(
    image: torch.Tensor, recon: torch.Tensor, cfg: GmsConfig | None = None
) -> torch.Tensor:
    """Mean gradient-magnitude dissimilarity, ``mean(1 - gms_map)``."""
    return (1.0 - gms_map(image, recon, cfg)).mean()


def _gaussian_window(size: int, sigma: float, dtype: torch.dtype) -> torch.Tensor:
    half = size // 2
    g = torch.tensor(
        [math.exp(-((i - half) ** 2) / (2.0 * sigma**2)) for i in range(size)],
        dtype=dtype,
    )
    g = g / g.sum()
    win = g[:, None] @ g[None, :]
    return win / win.sum()


def ssim_map(
    image: torch.Tensor,
    recon: torch.Tensor,
    window_size: int = SSIM_WINDOW,
    sigma: float = SSIM_SIGMA,
    c1: float = SSIM_C1,
    c2: float = SSIM_C2,
) -> torch.Tensor:
    """Per-pixel structural similarity, averaged over channels.

    Local means/variances/covariance come from a Gaussian window with
    replicate padding.  ``c1`` and ``c2`` must be positive.
    """
    if c1 <= 0 or c2 <= 0:
        raise ValueError("SSIM stability constants must be > 0")
    _check_pair(image, recon)
    a, squeeze = _batched(image)
    b, _ = _batched(recon)
    if a.shape[-2] < window_size or a.shape[-1] < window_size:
        raise ValueError(
            f"image {tuple(a.shape[-2:])} smaller than SSIM window {window_size}"
        )
    win = _gaussian_window(window_size, sigma, a.dtype)

    mu_a = _conv_replicate(a, win)
    mu_b = _conv_replicate(b, win)
    var_a = _conv_replicate(a * a, win) - mu_a * mu_a
    var_b = _conv_replicate(b * b, win) - mu_b * mu_b
    cov = _conv_replicate(a * b, win) - mu_a * mu_b

    sim = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    out = sim.mean(dim=1)
    return out.squeeze(0) if squeeze else out


def ssim_loss(
    image: torch.Tensor,
    recon: torch.Tensor,
    window_size: int = SSIM_WINDOW,
    sigma: float = SSIM_SIGMA,
    c1: float = SSIM_C1,
    c2: float = SSIM_C2,
) -> torch.Tensor:
    """Mean structural dissimilarity, ``mean(1 - ssim_map)``."""
    return (1.0 - ssim_map(image, recon, window_size, sigma, c1, c2)).mean()


def error_map_f(
    image: torch.Tensor,
    recon: torch.Tensor,
    gms_cfg: GmsConfig | None = None,
) -> torch.Tensor:
    """Combined per-pixel anomaly error: L2 + (1 - GMS) + (1 - SSIM).

    Identical inputs give exactly zero; with inputs in [0, 1] every pixel
    is bounded by 5.  Tiny negative rounding in the similarity terms is
    clamped so scores stay non-negative.
    """
    l2 = mse_map(image, recon)
    gms_d = torch.clamp_min(1.0 - gms_map(image, recon, gms_cfg), 0.0)
    ssim_d = torch.clamp_min(1.0 - ssim_map(image, recon), 0.0)
    return l2 + gms_d + ssim_d


def mask_loss(mask: torch.Tensor, mask_pred: torch.Tensor) -> torch.Tensor:
    """Mean squared error between a binary mask and its predicted plane."""
    _check_pair(mask, mask_pred)
    return ((mask - mask_pred) ** 2).mean()


def loss_terms(
    image: torch.Tensor,
    composed: torch.Tensor,
    mask: torch.Tensor,
    mask_pred: torch.Tensor,
    weights: LossWeights | None = None,
    gms_cfg: GmsConfig | None = None,
) -> dict[str, torch.Tensor]:
    """All four loss terms plus their weighted total, as scalar tensors.

    ``composed`` is the reconstruction with visible pixels already copied
    back from the input; the mask head is penalized on its raw output.
    """
    w = weights or LossWeights()
    terms = {
        "mse": mse_loss(image, composed),
        "gms": gms_loss(image, composed, gms_cfg),
        "ssim": ssim_loss(image, composed),
        "mask": mask_loss(mask, mask_pred),
    }
    terms["total"] = (
        w.mse * terms["mse"]
        + w.gms * terms["gms"]
        + w.ssim * terms["ssim"]
        + w.mask * terms["mask"]
    )
    return terms


def total_loss(
    image: torch.Tensor,
    composed: torch.Tensor,
    mask: torch.Tensor,
    mask_pred: torch.Tensor,
    weights: LossWeights | None = None,
    gms_cfg: GmsConfig | None = None,
) -> torch.Tensor:
    """Weighted sum of the four training losses (differentiable)."""
    return loss_terms(image, composed, mask, mask_pred, weights, gms_cfg)["total"]
