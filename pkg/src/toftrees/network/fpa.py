"""Pyramid attention decoder: multi-scale context without losing localization."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import Mode

MIN_SPATIAL = 14
_PAD_MULTIPLE = 8
_MIN_PADDED = 16


def _pad_target(size: int) -> int:
    return max(_MIN_PADDED, -(-size // _PAD_MULTIPLE) * _PAD_MULTIPLE)


class PyramidAttention(nn.Module):
    """Attention decoder over a three-level strided-conv pyramid.

    The input is reflect-padded to a pyramid-friendly size (14 -> 16),
    reduced by stride-2 convs with 7x7, 5x5 and 3x3 kernels, and merged
    bottom-up with nearest-neighbor upsizing followed by a 3x3 conv (upsize
    convolutions instead of transpose convolutions). The merged attention
    map multiplies a 1x1 projection of the input, a global-average-pool
    branch is added, and the result is cropped back.

    `attention_enabled` / `gap_enabled` zero out a branch for tests probing
    the additive structure and the local receptive field.
    """

    def __init__(self, in_channels: int, width: int, pyramid_width: int,
                 min_spatial: int = MIN_SPATIAL):
        super().__init__()
        self.min_spatial = min_spatial
        q = pyramid_width
        self.mid = nn.Conv2d(in_channels, width, 1)
        self.gap = nn.Conv2d(in_channels, width, 1)
        self.down1 = nn.Conv2d(in_channels, q, 7, stride=2, padding=3, padding_mode="reflect")
        self.down2 = nn.Conv2d(q, q, 5, stride=2, padding=2, padding_mode="reflect")
        self.down3 = nn.Conv2d(q, q, 3, stride=2, padding=1, padding_mode="reflect")
        self.lat1 = nn.Conv2d(q, width, 7, padding=3, padding_mode="reflect")
        self.lat2 = nn.Conv2d(q, width, 5, padding=2, padding_mode="reflect")
        self.lat3 = nn.Conv2d(q, width, 3, padding=1, padding_mode="reflect")
        self.up3 = nn.Conv2d(width, width, 3, padding=1, padding_mode="reflect")
        self.up2 = nn.Conv2d(width, width, 3, padding=1, padding_mode="reflect")
        self.up1 = nn.Conv2d(width, width, 3, padding=1, padding_mode="reflect")
        self.attention_enabled = True
        self.gap_enabled = True

    def forward(self, x: torch.Tensor, mode: Mode) -> torch.Tensor:
        h, w = x.shape[2], x.shape[3]
        if h < self.min_spatial or w < self.min_spatial:
            raise ValueError(
                f"pyramid decoder needs spatial dims >= {self.min_spatial}, got {h}x{w}"
            )
        th, tw = _pad_target(h), _pad_target(w)
        top, left = (th - h) // 2, (tw - w) // 2
        xp = F.pad(x, (left, tw - w - left, top, th - h - top), mode="reflect")

        d1 = F.relu(self.down1(xp))
        d2 = F.relu(self.down2(d1))
        d3 = F.relu(self.down3(d2))
        l1 = F.relu(self.lat1(d1))
        l2 = F.relu(self.lat2(d2))
        l3 = F.relu(self.lat3(d3))
        m2 = l2 + F.relu(self.up3(F.interpolate(l3, scale_factor=2, mode="nearest")))
        m1 = l1 + F.relu(self.up2(F.interpolate(m2, scale_factor=2, mode="nearest")))
        att = F.relu(self.up1(F.interpolate(m1, scale_factor=2, mode="nearest")))

        out = self.mid(xp) * att if self.attention_enabled else torch.zeros_like(att)
        if self.gap_enabled:
            pooled = xp.mean(dim=(2, 3), keepdim=True)
            out = out + self.gap(pooled)
        return out[:, :, top : top + h, left : left + w]
