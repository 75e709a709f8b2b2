"""Full detector: cGRU encoder, pyramid attention, csSE conv blocks,
hypercolumns, sigmoid head. Plus checkpoint serialization."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..raster import NUM_CHANNELS, PredictionGrid, TimeSeriesStack
from .fpa import PyramidAttention
from .gru import BidirectionalEncoder
from .layers import (
    BatchRenorm2d,
    ConcurrentSE,
    DropBlock2d,
    Mode,
    NonFiniteError,
    glorot_uniform_,
    he_normal_,
    reflect_conv,
)


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = NUM_CHANNELS
    hidden_per_direction: int = 32
    fpa_width: int = 32
    fpa_pyramid_width: int = 12
    conv_block_width: int = 32
    zoneout_prob: float = 0.2
    dropblock_max: float = 0.2
    head_prior: float = 0.01
    time_steps: int = 24

    def __post_init__(self):
        for name in ("in_channels", "hidden_per_direction", "fpa_width",
                     "fpa_pyramid_width", "conv_block_width", "time_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("zoneout_prob", "dropblock_max"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if not 0.0 < self.head_prior < 1.0:
            raise ValueError("head_prior must be in (0, 1)")


class ConvBlock(nn.Module):
    """conv3x3 -> batch renorm -> ReLU -> concurrent SE -> DropBlock."""

    def __init__(self, in_channels: int, width: int):
        super().__init__()
        self.conv = reflect_conv(in_channels, width, 3)
        self.norm = BatchRenorm2d(width)
        self.se = ConcurrentSE(width)
        self.dropblock = DropBlock2d(block_size=3)

    def forward(self, x: torch.Tensor, mode: Mode) -> torch.Tensor:
        out = F.relu(self.norm(self.conv(x), mode))
        out = self.se(out)
        return self.dropblock(out, mode)


class TreeDetector(nn.Module):
    """Pixelwise tree-presence probabilities from a [T, H, W, C] stack."""

    def __init__(self, config: NetConfig = NetConfig(),
                 generator: torch.Generator | None = None,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        hidden2 = 2 * config.hidden_per_direction
        self.encoder = BidirectionalEncoder(
            config.in_channels, config.hidden_per_direction, config.zoneout_prob
        )
        # min_spatial 8 (not the standalone decoder's 14) so reduced-geometry
        # gradient checks can drive the full model end to end.
        self.fpa = PyramidAttention(
            hidden2, config.fpa_width, config.fpa_pyramid_width, min_spatial=8
        )
        self.block1 = ConvBlock(config.fpa_width, config.conv_block_width)
        self.block2 = ConvBlock(config.conv_block_width, config.conv_block_width)
        hyper = hidden2 + config.fpa_width + 2 * config.conv_block_width
        self.head = nn.Conv2d(hyper, 1, 1)
        self._init_weights(generator)
        self.to(dtype)

    def _init_weights(self, generator: torch.Generator | None) -> None:
        # He fan-in normals for convs feeding batch renorm, glorot uniform
        # elsewhere; the head follows the rare-positive prior initialization.
        renorm_fed = {id(self.block1.conv.weight), id(self.block2.conv.weight)}
        with torch.no_grad():
            for module in self.modules():
                if not isinstance(module, nn.Conv2d):
                    continue
                if module is self.head:
                    module.weight.normal_(0.0, 0.01, generator=generator)
                    pi = self.config.head_prior
                    module.bias.fill_(-math.log((1.0 - pi) / pi))
                    continue
                if id(module.weight) in renorm_fed:
                    he_normal_(module.weight, generator)
                else:
                    glorot_uniform_(module.weight, generator)
                if module.bias is not None:
                    module.bias.zero_()

    def forward(self, x: torch.Tensor, mode: Mode) -> torch.Tensor:
        """x: [B, T, C, H, W] -> probabilities [B, H, W]."""
        if x.ndim != 5:
            raise ValueError(f"expected [B, T, C, H, W], got {tuple(x.shape)}")
        if x.shape[1] != self.config.time_steps:
            raise ValueError(
                f"expected T={self.config.time_steps}, got {x.shape[1]}"
            )
        encoded = self.encoder(x, mode)
        attended = self.fpa(encoded, mode)
        b1 = self.block1(attended, mode)
        b2 = self.block2(b1, mode)
        hyper = torch.cat([encoded, attended, b1, b2], dim=1)
        probs = torch.sigmoid(self.head(hyper)).squeeze(1)
        if not torch.isfinite(probs).all():
            raise NonFiniteError("sigmoid head produced non-finite probabilities")
        return probs

    def predict_grid(self, stack: TimeSeriesStack) -> PredictionGrid:
        """Eval-mode forward for a single stack."""
        x = stack_to_tensor(stack, next(self.parameters()).dtype)
        with torch.no_grad():
            probs = self.forward(x.unsqueeze(0), Mode.eval())[0]
        return PredictionGrid(probs.numpy().astype(np.float64))


def stack_to_tensor(stack: TimeSeriesStack, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """[T, H, W, C] numpy stack -> [T, C, H, W] torch tensor."""
    arr = np.transpose(np.asarray(stack.data), (0, 3, 1, 2)).copy()
    return torch.as_tensor(arr).to(dtype)


def batch_to_tensor(stacks, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    return torch.stack([stack_to_tensor(s, dtype) for s in stacks], dim=0)


def param_count(config: NetConfig) -> int:
    """Learnable scalars for a config (running statistics excluded)."""
    model = TreeDetector(config, generator=torch.Generator().manual_seed(0))
    return sum(p.numel() for p in model.parameters())


# ---------------------------------------------------------------------------
# Checkpoints: model.json manifest + params.bin of little-endian float32.
# The manifest lists every tensor (parameters first, then buffers such as
# batch-renorm running statistics) with its byte offset into params.bin.
# ---------------------------------------------------------------------------

def _named_tensors(model: TreeDetector):
    for name, p in model.named_parameters():
        yield name, p.detach(), "param"
    for name, b in model.named_buffers():
        yield name, b.detach(), "buffer"


def save_checkpoint(model: TreeDetector, out_dir, *, epoch: int = 0,
                    threshold: float | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    blobs = []
    offset = 0
    for name, tensor, kind in _named_tensors(model):
        arr = tensor.cpu().numpy().astype("<f4")
        entries.append({
            "name": name,
            "kind": kind,
            "shape": list(arr.shape),
            "offset": offset,
        })
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "config": asdict(model.config),
        "epoch": int(epoch),
        "threshold": threshold,
        "total_learnable": sum(p.numel() for p in model.parameters()),
        "tensors": entries,
    }
    (out_dir / "model.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (out_dir / "params.bin").write_bytes(b"".join(blobs))
    return out_dir


def load_checkpoint(ckpt_dir, dtype: torch.dtype = torch.float32) -> tuple[TreeDetector, dict]:
    ckpt_dir = Path(ckpt_dir)
    manifest = json.loads((ckpt_dir / "model.json").read_text())
    config = NetConfig(**manifest["config"])
    model = TreeDetector(config, generator=torch.Generator().manual_seed(0), dtype=dtype)
    raw = (ckpt_dir / "params.bin").read_bytes()
    state = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(
            raw, dtype="<f4", count=count, offset=entry["offset"]
        ).reshape(shape)
        state[entry["name"]] = torch.as_tensor(arr.copy()).to(dtype)
    model.load_state_dict(state)
    return model, manifest
