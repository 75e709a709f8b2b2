"""Convolutional GRU encoder over the image time series."""

from __future__ import annotations

import torch
import torch.nn as nn

from .layers import LayerNorm2d, Mode, NonFiniteError, reflect_conv


class ConvGRUCell(nn.Module):
    """GRU cell whose gates are 3x3 convolutions over [input, state].

    Update and reset gates are layer-normalized sigmoids, each rescaled by
    its own sigmoid-activated 1x1 excitation of the gate features. In train
    mode zoneout keeps the previous state per unit with probability
    `zoneout_prob`. Weights are shared across time steps by reusing the cell.
    """

    def __init__(self, in_channels: int, hidden: int, zoneout_prob: float = 0.2):
        super().__init__()
        self.hidden = hidden
        self.zoneout_prob = zoneout_prob
        self.gates = reflect_conv(in_channels + hidden, 2 * hidden, 3)
        self.gate_norm = LayerNorm2d(2 * hidden)
        self.update_se = nn.Conv2d(hidden, hidden, 1)
        self.reset_se = nn.Conv2d(hidden, hidden, 1)
        self.candidate = reflect_conv(in_channels + hidden, hidden, 3)
        self.candidate_norm = LayerNorm2d(hidden)

    def forward(self, x: torch.Tensor, h_prev: torch.Tensor, mode: Mode) -> torch.Tensor:
        gate_feat = self.gate_norm(self.gates(torch.cat([x, h_prev], dim=1)))
        update_feat, reset_feat = torch.split(gate_feat, self.hidden, dim=1)
        z = torch.sigmoid(update_feat) * torch.sigmoid(self.update_se(update_feat))
        r = torch.sigmoid(reset_feat) * torch.sigmoid(self.reset_se(reset_feat))
        cand = torch.tanh(
            self.candidate_norm(self.candidate(torch.cat([x, r * h_prev], dim=1)))
        )
        h_new = (1.0 - z) * h_prev + z * cand
        if mode.training and self.zoneout_prob > 0.0:
            noise = torch.rand(h_new.shape, generator=mode.generator, dtype=h_new.dtype)
            keep_prev = noise < self.zoneout_prob
            h_new = torch.where(keep_prev, h_prev, h_new)
        if not torch.isfinite(h_new).all():
            raise NonFiniteError("conv_gru_cell produced non-finite state")
        return h_new


class BidirectionalEncoder(nn.Module):
    """Independent forward and backward cGRU passes, final states concatenated."""

    def __init__(self, in_channels: int, hidden: int, zoneout_prob: float = 0.2):
        super().__init__()
        self.hidden = hidden
        self.forward_cell = ConvGRUCell(in_channels, hidden, zoneout_prob)
        self.backward_cell = ConvGRUCell(in_channels, hidden, zoneout_prob)

    def forward(self, x: torch.Tensor, mode: Mode) -> torch.Tensor:
        """x: [B, T, C, H, W] -> [B, 2*hidden, H, W]."""
        b, t, _, h, w = x.shape
        state_f = x.new_zeros(b, self.hidden, h, w)
        state_b = x.new_zeros(b, self.hidden, h, w)
        for step in range(t):
            state_f = self.forward_cell(x[:, step], state_f, mode)
        for step in reversed(range(t)):
            state_b = self.backward_cell(x[:, step], state_b, mode)
        return torch.cat([state_f, state_b], dim=1)
