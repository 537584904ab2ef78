"""Conditional restoration network: masked image in, image + mask out.

A U-Net style encoder-decoder.  The encoder sees only the masked image;
the mask itself enters through mask attention blocks placed in front of
each of the three decoder stages.  Skip connections join the encoder and
decoder at the three matching resolutions.  Two heads share the decoder
trunk: a 3x3 image head and a 1x1 mask-reconstruction head, both sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .masks import downsample_mask_nearest

__all__ = ["ArchConfig", "MaskAttention", "RestorationNet", "build_model", "compose"]


@dataclass(frozen=True)
class ArchConfig:
    """Network hyperparameters.

    ``channels`` lists the widths of the four encoder levels (full, /2, /4,
    /8 resolution); the decoder mirrors them.  Input height and width must
    equal ``resolution`` and be divisible by 8.
    """

    resolution: int = 64
    in_channels: int = 3
    channels: tuple[int, int, int, int] = (32, 64, 128, 256)
    negative_slope: float = 0.1

    def __post_init__(self) -> None:
        if len(self.channels) != 4 or any(c < 1 for c in self.channels):
            raise ValueError(f"need 4 positive channel widths, got {self.channels}")
        if self.resolution % 8 != 0 or self.resolution < 8:
            raise ValueError(f"resolution must be a positive multiple of 8, got {self.resolution}")

    def to_dict(self) -> dict:
        return {
            "resolution": self.resolution,
            "in_channels": self.in_channels,
            "channels": list(self.channels),
            "negative_slope": self.negative_slope,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(
            resolution=int(d["resolution"]),
            in_channels=int(d["in_channels"]),
            channels=tuple(int(c) for c in d["channels"]),
            negative_slope=float(d["negative_slope"]),
        )


class MaskAttention(nn.Module):
    """Residual block gated by the (downsampled) visibility mask.

    Computes ``f + phi(concat(f, m)) * m`` where ``phi`` is two 3x3
    convolutions with an activation between them, and ``m`` broadcasts over
    channels.  Wherever ``m`` is zero the block is an exact identity.
    """

    def __init__(self, channels: int, negative_slope: float = 0.1):
        super().__init__()
        self.conv1 = nn.Conv2d(channels + 1, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.negative_slope = negative_slope

    def forward(self, feat: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if feat.shape[-2:] != mask.shape[-2:]:
            raise ValueError(
                f"feature {tuple(feat.shape)} and mask {tuple(mask.shape)} disagree spatially"
            )
        x = torch.cat([feat, mask], dim=1)
        x = F.leaky_relu(self.conv1(x), self.negative_slope)
        return feat + self.conv2(x) * mask


class RestorationNet(nn.Module):
    """Encoder-decoder that restores hidden pixels and re-predicts the mask."""

    def __init__(self, arch: ArchConfig | None = None):
        super().__init__()
        self.arch = arch or ArchConfig()
        c0, c1, c2, c3 = self.arch.channels
        cin = self.arch.in_channels

        self.enc0 = nn.Conv2d(cin, c0, 3, padding=1)
        self.enc1 = nn.Conv2d(c0, c1, 3, stride=2, padding=1)
        self.enc2 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.enc3 = nn.Conv2d(c2, c3, 3, stride=2, padding=1)

        slope = self.arch.negative_slope
        self.attn1 = MaskAttention(c3, slope)
        self.dec1 = nn.Conv2d(c3 + c2, c2, 3, padding=1)
        self.attn2 = MaskAttention(c2, slope)
        self.dec2 = nn.Conv2d(c2 + c1, c1, 3, padding=1)
        self.attn3 = MaskAttention(c1, slope)
        self.dec3 = nn.Conv2d(c1 + c0, c0, 3, padding=1)

        self.head_image = nn.Conv2d(c0, cin, 3, padding=1)
        self.head_mask = nn.Conv2d(c0, 1, 1)

    def _act(self, x: torch.Tensor) -> torch.Tensor:
        return F.leaky_relu(x, self.arch.negative_slope)

    def forward(
        self, masked_image: torch.Tensor, mask: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Restore a batch of masked images.

        Args:
            masked_image: ``(B, C, H, W)`` with hidden pixels zeroed.
            mask: ``(B, 1, H, W)`` visibility plane over {0, 1}.

        Returns:
            ``(restored, mask_pred)``: the ``(B, C, H, W)`` reconstruction
            and the ``(B, 1, H, W)`` mask prediction, both in [0, 1].
        """
        if masked_image.dim() != 4 or mask.dim() != 4:
            raise ValueError("forward expects batched (B, C, H, W) inputs")
        h, w = masked_image.shape[-2:]
        res = self.arch.resolution
        if h != res or w != res:
            raise ValueError(f"input is {h}x{w} but the network expects {res}x{res}")
        if mask.shape[-2:] != (h, w) or mask.shape[1] != 1:
            raise ValueError(f"mask shape {tuple(mask.shape)} does not match input")

        mask = mask.to(masked_image.dtype)
        e0 = self._act(self.enc0(masked_image))
        e1 = self._act(self.enc1(e0))
        e2 = self._act(self.enc2(e1))
        e3 = self._act(self.enc3(e2))

        m8 = downsample_mask_nearest(mask, h // 8, w // 8)
        m4 = downsample_mask_nearest(mask, h // 4, w // 4)
        m2 = downsample_mask_nearest(mask, h // 2, w // 2)

        f = self.attn1(e3, m8)
        f = self._act(self.dec1(torch.cat([self._up(f), e2], dim=1)))
        f = self.attn2(f, m4)
        f = self._act(self.dec2(torch.cat([self._up(f), e1], dim=1)))
        f = self.attn3(f, m2)
        f = self._act(self.dec3(torch.cat([self._up(f), e0], dim=1)))

        restored = torch.sigmoid(self.head_image(f))
        mask_pred = torch.sigmoid(self.head_mask(f))
        return restored, mask_pred

    @staticmethod
    def _up(x: torch.Tensor) -> torch.Tensor:
        return F.interpolate(x, scale_factor=2, mode="nearest")


def build_model(arch: ArchConfig | None = None, seed: int = 0) -> RestorationNet:
    """Construct a net with seeded, reproducible weight initialization.

    The global torch RNG state is forked and restored, so building a model
    never perturbs other random draws.
    """
    arch = arch or ArchConfig()
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return RestorationNet(arch)


def compose(
    image: torch.Tensor, restored: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """Copy visible pixels from the input, keep restored ones elsewhere.

    ``composed = restored * (1 - mask) + image * mask`` with the mask
    broadcast along channels.  An all-ones mask returns the input exactly;
    an all-zeros mask returns the restoration exactly.
    """
    if image.shape != restored.shape:
        raise ValueError(
            f"image {tuple(image.shape)} and restoration {tuple(restored.shape)} differ"
        )
    if image.shape[-2:] != mask.shape[-2:]:
        raise ValueError(
            f"mask {tuple(mask.shape)} does not match image {tuple(image.shape)}"
        )
    m = mask.to(image.dtype)
    return restored * (1.0 - m) + image * m
