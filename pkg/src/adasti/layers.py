"""Building blocks shared by the conditionalizer and the denoiser.

Feature maps are laid out ``(batch, channels, nodes, time)`` throughout.
"""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .s4 import S4Layer

TEMPORAL = "temporal"
SPATIAL = "spatial"


def to_sequences(x: torch.Tensor, axis: str) -> torch.Tensor:
    B, C, N, L = x.shape
    if axis == TEMPORAL:
        return x.permute(0, 2, 3, 1).reshape(B * N, L, C)
    if axis == SPATIAL:
        return x.permute(0, 3, 2, 1).reshape(B * L, N, C)
    raise ValueError(f"unknown axis {axis!r}")


def from_sequences(s: torch.Tensor, shape, axis: str) -> torch.Tensor:
    B, C, N, L = shape
    if axis == TEMPORAL:
        return s.reshape(B, N, L, C).permute(0, 3, 1, 2)
    return s.reshape(B, L, N, C).permute(0, 3, 2, 1)


class ChannelNorm(nn.LayerNorm):
    """Layer norm over the channel axis of a (B, C, N, L) map."""

    def forward(self, x):
        return super().forward(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


class Attention(nn.Module):
    """Multi-head scaled dot-product attention.

    Queries and keys are projected from ``query_src``/``key_src`` and values
    from ``value_src``, so the same module serves self- and cross-attention.
    """

    def __init__(self, channels: int, heads: int = 8):
        super().__init__()
        if channels % heads:
            raise ValueError("channels must be divisible by heads")
        self.heads = heads
        self.head_dim = channels // heads
        self.W_q = nn.Linear(channels, channels, bias=False)
        self.W_k = nn.Linear(channels, channels, bias=False)
        self.W_v = nn.Linear(channels, channels, bias=False)
        self.out = nn.Linear(channels, channels)

    def _split(self, t):
        S, T, _ = t.shape
        return t.reshape(S, T, self.heads, self.head_dim).transpose(1, 2)

    def forward(self, query_src, key_src, value_src):
        q = self._split(self.W_q(query_src))
        k = self._split(self.W_k(key_src))
        v = self._split(self.W_v(value_src))
        ctx = F.scaled_dot_product_attention(q, k, v)
        S, _, T, _ = ctx.shape
        return self.out(ctx.transpose(1, 2).reshape(S, T, -1))


def sinusoidal_encoding(length: int, channels: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    freq = torch.exp(
        torch.arange(0, channels, 2, dtype=torch.float64) * (-math.log(10000.0) / channels)
    )
    pe = torch.zeros(length, channels, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * freq)
    pe[:, 1::2] = torch.cos(pos * freq)[:, : channels // 2]
    return pe.to(dtype)


class AxisSelfAttention(nn.Module):
    """Self-attention along one axis of a (B, C, N, L) map."""

    def __init__(self, channels, heads, axis, positional=False):
        super().__init__()
        self.axis = axis
        self.positional = positional
        self.attn = Attention(channels, heads)

    def forward(self, x):
        s = to_sequences(x, self.axis)
        if self.positional:
            s = s + sinusoidal_encoding(s.shape[1], s.shape[2], s.dtype).to(s.device)
        return from_sequences(self.attn(s, s, s), x.shape, self.axis)


def normalized_adjacency(adjacency) -> torch.Tensor:
    """``D^-1/2 (A + I) D^-1/2``."""
    A = torch.as_tensor(np.asarray(adjacency), dtype=torch.float64)
    A = A + torch.eye(A.shape[0], dtype=A.dtype)
    d = A.sum(dim=1).rsqrt()
    return d[:, None] * A * d[None, :]


def gcn_propagate(h: torch.Tensor, a_hat: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    """``A_hat H W`` at every timestamp; ``weight`` maps channels in -> out."""
    mixed = torch.einsum("nm,bcml->bcnl", a_hat.to(h.dtype), h)
    return torch.einsum("oc,bcnl->bonl", weight, mixed)


class GraphConv(nn.Module):
    def __init__(self, channels: int, adjacency):
        super().__init__()
        self.register_buffer("a_hat", normalized_adjacency(adjacency).float())
        self.W = nn.Linear(channels, channels, bias=False)

    def forward(self, h):
        return gcn_propagate(h, self.a_hat, self.W.weight)


class ChannelMLP(nn.Module):
    def __init__(self, channels, hidden):
        super().__init__()
        self.fc1 = nn.Conv2d(channels, hidden, 1)
        self.fc2 = nn.Conv2d(hidden, channels, 1)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class GCGRU(nn.Module):
    """Graph-convolutional GRU run over time; gates mix neighbours with A_hat."""

    def __init__(self, channels: int, adjacency):
        super().__init__()
        self.register_buffer("a_hat", normalized_adjacency(adjacency).float())
        self.gates = nn.Conv1d(2 * channels, 2 * channels, 1)
        self.cand = nn.Conv1d(2 * channels, channels, 1)

    def _mix(self, z):  # z: (B, C, N)
        return torch.einsum("nm,bcm->bcn", self.a_hat.to(z.dtype), z)

    def forward(self, x):  # (B, C, N, L)
        h = torch.zeros_like(x[..., 0])
        out = []
        for t in range(x.shape[-1]):
            xt = x[..., t]
            zr = torch.sigmoid(self.gates(self._mix(torch.cat([xt, h], dim=1))))
            z, r = zr.chunk(2, dim=1)
            c = torch.tanh(self.cand(self._mix(torch.cat([xt, r * h], dim=1))))
            h = z * h + (1 - z) * c
            out.append(h)
        return torch.stack(out, dim=-1)


class AuxS4GCGRU(nn.Module):
    """Optional S4-over-time followed by a GCGRU, both added residually."""

    def __init__(self, channels: int, adjacency, d_state: int = 64):
        super().__init__()
        self.s4 = S4Layer(channels, d_state)
        self.gru = GCGRU(channels, adjacency)
        self.norm = ChannelNorm(channels)

    def forward(self, x):
        y = x + self.s4(x.transpose(1, 2)).transpose(1, 2)
        return self.norm(y + self.gru(y))
