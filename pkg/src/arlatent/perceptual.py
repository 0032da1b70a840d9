"""Deterministic perceptual feature distance.

A fixed, frozen 3-stage convolutional stack with seed-initialized weights
maps images to multi-scale feature maps; the distance between two images is
the mean squared difference of those maps (plus the raw-pixel scale, which
makes the distance strictly positive for distinct inputs).  No pretrained
weights are involved, so values are reproducible from the seed alone.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .errors import ContractError

FEATURE_SEED = 0xC0FFEE

_STAGE_WIDTHS = (16, 32, 64)
_KERNEL = 5


class PerceptualDistance(nn.Module):
    """Frozen random-feature distance between equal-shape image batches.

    Channels are folded into the batch axis before feature extraction, so
    the same weights serve 1- and 2-channel images and per-channel distances
    are consistent with whole-image ones.
    """

    def __init__(self, seed: int = FEATURE_SEED):
        super().__init__()
        self.seed = seed
        generator = torch.Generator().manual_seed(seed)
        stages = []
        in_ch = 1
        for out_ch in _STAGE_WIDTHS:
            conv = nn.Conv2d(in_ch, out_ch, _KERNEL, stride=2, padding=_KERNEL // 2)
            fan_in = in_ch * _KERNEL * _KERNEL
            with torch.no_grad():
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=generator)
                    * math.sqrt(2.0 / fan_in)
                )
                conv.bias.zero_()
            stages.append(conv)
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        batch, channels = x.shape[0], x.shape[1]
        h = x.reshape(batch * channels, 1, x.shape[2], x.shape[3])
        feats = [h]
        for conv in self.stages:
            h = torch.tanh(conv(h))
            feats.append(h)
        return feats

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        if x.shape != y.shape:
            raise ContractError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
        if x.ndim == 2:
            x = x[None, None]
            y = y[None, None]
        elif x.ndim == 3:
            x = x[None]
            y = y[None]
        elif x.ndim != 4:
            raise ContractError(f"expected 2-4 dims, got {x.ndim}")
        fx = self.features(x)
        fy = self.features(y)
        per_scale = [torch.mean((a - b) ** 2) for a, b in zip(fx, fy)]
        return torch.stack(per_scale).mean()


_default_stack: PerceptualDistance | None = None


def default_stack() -> PerceptualDistance:
    global _default_stack
    if _default_stack is None:
        _default_stack = PerceptualDistance()
    return _default_stack


def perceptual_feature_distance(x, y) -> float:
    """Distance between two images/batches as a plain float."""
    x = torch.as_tensor(x, dtype=torch.float32)
    y = torch.as_tensor(y, dtype=torch.float32)
    with torch.no_grad():
        return float(default_stack()(x, y))
