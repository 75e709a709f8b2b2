"""Building blocks: layer norm, batch renorm, concurrent SE, DropBlock."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


class NonFiniteError(RuntimeError):
    """An activation went non-finite; carries the layer name."""


@dataclass
class Mode:
    """Per-call execution state threaded through every forward pass.

    Stochastic layers draw from `generator` and are active only when
    `training` is set. `update_stats=False` freezes batch-renorm running
    statistics (used by the finite-difference harness, which needs repeated
    forwards to be side-effect free).
    """

    training: bool
    epoch: int = 0
    generator: torch.Generator | None = None
    dropblock_prob: float = 0.0
    update_stats: bool = True

    @classmethod
    def train(cls, epoch: int = 0, generator: torch.Generator | None = None,
              dropblock_prob: float = 0.0, update_stats: bool = True) -> "Mode":
        return cls(True, epoch, generator, dropblock_prob, update_stats)

    @classmethod
    def eval(cls) -> "Mode":
        return cls(False)


def glorot_uniform_(tensor: torch.Tensor, generator: torch.Generator | None = None) -> None:
    fan_in, fan_out = _fans(tensor)
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        tensor.uniform_(-bound, bound, generator=generator)


def he_normal_(tensor: torch.Tensor, generator: torch.Generator | None = None) -> None:
    fan_in, _ = _fans(tensor)
    std = math.sqrt(2.0 / fan_in)
    with torch.no_grad():
        tensor.normal_(0.0, std, generator=generator)


def _fans(tensor: torch.Tensor) -> tuple[int, int]:
    if tensor.ndim < 2:
        raise ValueError("fan computation needs at least 2 dims")
    receptive = int(torch.tensor(tensor.shape[2:]).prod()) if tensor.ndim > 2 else 1
    return tensor.shape[1] * receptive, tensor.shape[0] * receptive


def reflect_conv(in_ch: int, out_ch: int, kernel: int, stride: int = 1) -> nn.Conv2d:
    """3x3/5x5/7x7 conv with reflect padding preserving spatial dims at stride 1."""
    return nn.Conv2d(
        in_ch, out_ch, kernel, stride=stride,
        padding=kernel // 2, padding_mode="reflect",
    )


class LayerNorm2d(nn.Module):
    """Layer normalization over channels at each spatial position."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(1, channels, 1, 1))
        self.bias = nn.Parameter(torch.zeros(1, channels, 1, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        return self.weight * (x - mean) / torch.sqrt(var + self.eps) + self.bias


def renorm_limits(epoch: int) -> tuple[float, float]:
    """Correction clamps: rmax ramps 1->3 over epochs 5-40, dmax 0->5 over 5-25."""
    rmax = 1.0 + 2.0 * min(max(epoch - 5, 0) / 35.0, 1.0)
    dmax = 5.0 * min(max(epoch - 5, 0) / 20.0, 1.0)
    return rmax, dmax


class BatchRenorm2d(nn.Module):
    """Batch renormalization with clamped train/inference corrections.

    In train mode the batch statistics are corrected toward the running
    statistics by r and d, clamped to the epoch-scheduled rmax/dmax and
    treated as constants for the backward pass. Eval mode uses running
    statistics only.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))

    def forward(self, x: torch.Tensor, mode: Mode) -> torch.Tensor:
        c = x.shape[1]
        w = self.weight.view(1, c, 1, 1)
        b = self.bias.view(1, c, 1, 1)
        if not mode.training:
            mean = self.running_mean.view(1, c, 1, 1)
            std = torch.sqrt(self.running_var + self.eps).view(1, c, 1, 1)
            return w * (x - mean) / std + b

        mean_b = x.mean(dim=(0, 2, 3))
        var_b = x.var(dim=(0, 2, 3), unbiased=False)
        std_b = torch.sqrt(var_b + self.eps)
        std_r = torch.sqrt(self.running_var + self.eps)
        rmax, dmax = renorm_limits(mode.epoch)
        r = (std_b / std_r).clamp(1.0 / rmax, rmax).detach()
        d = ((mean_b - self.running_mean) / std_r).clamp(-dmax, dmax).detach()
        xhat = (x - mean_b.view(1, c, 1, 1)) / std_b.view(1, c, 1, 1)
        xhat = xhat * r.view(1, c, 1, 1) + d.view(1, c, 1, 1)
        if mode.update_stats:
            with torch.no_grad():
                self.running_mean += self.momentum * (mean_b - self.running_mean)
                self.running_var += self.momentum * (var_b - self.running_var)
        return w * xhat + b


class ConcurrentSE(nn.Module):
    """Concurrent channel and spatial squeeze-and-excitation.

    The two recalibrations are combined with an elementwise max. The
    `*_gate_override` attributes replace a gate with a constant, which tests
    use to verify the neutral-gate identity.
    """

    def __init__(self, channels: int, reduction: int = 2):
        super().__init__()
        squeezed = max(channels // reduction, 1)
        self.channel_fc1 = nn.Conv2d(channels, squeezed, 1)
        self.channel_fc2 = nn.Conv2d(squeezed, channels, 1)
        self.spatial = nn.Conv2d(channels, 1, 1)
        self.channel_gate_override: float | None = None
        self.spatial_gate_override: float | None = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.channel_gate_override is None:
            pooled = x.mean(dim=(2, 3), keepdim=True)
            cgate = torch.sigmoid(self.channel_fc2(F.relu(self.channel_fc1(pooled))))
        else:
            cgate = torch.as_tensor(self.channel_gate_override, dtype=x.dtype)
        if self.spatial_gate_override is None:
            sgate = torch.sigmoid(self.spatial(x))
        else:
            sgate = torch.as_tensor(self.spatial_gate_override, dtype=x.dtype)
        return torch.maximum(x * cgate, x * sgate)


class DropBlock2d(nn.Module):
    """Structured dropout masking contiguous blocks of the feature map."""

    def __init__(self, block_size: int = 3):
        super().__init__()
        self.block_size = block_size

    def forward(self, x: torch.Tensor, mode: Mode) -> torch.Tensor:
        p = mode.dropblock_prob
        if not mode.training or p <= 0.0:
            return x
        b = self.block_size
        h, w = x.shape[2], x.shape[3]
        valid_h, valid_w = max(h - b + 1, 1), max(w - b + 1, 1)
        gamma = p * h * w / (b * b * valid_h * valid_w)
        noise = torch.rand(x.shape, generator=mode.generator, dtype=x.dtype)
        seeds = (noise < gamma).to(x.dtype)
        # Seeds only where a full block fits.
        inset = b // 2
        if inset > 0:
            frame = torch.zeros_like(seeds)
            frame[:, :, inset : h - inset, inset : w - inset] = 1.0
            seeds = seeds * frame
        block = F.max_pool2d(seeds, kernel_size=b, stride=1, padding=b // 2)
        keep = 1.0 - block.clamp(max=1.0)
        kept = keep.sum()
        if kept == 0:
            return x * 0.0
        return x * keep * (keep.numel() / kept)
