"""Noise-aware denoiser: gated self/cross attention, graph convolution, and the
DiffWave-style residual stack that predicts the injected noise."""
from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractError
from .layers import (
    SPATIAL,
    TEMPORAL,
    Attention,
    AuxS4GCGRU,
    ChannelMLP,
    ChannelNorm,
    GraphConv,
    from_sequences,
    sinusoidal_encoding,
    to_sequences,
)


def diffusion_step_embedding(t, dim: int = 128, num_steps: int | None = None) -> torch.Tensor:
    """Sinusoidal features of the (1-based) step index; shape ``(*t.shape, dim)``."""
    t = torch.as_tensor(t)
    if torch.any(t < 1) or (num_steps is not None and torch.any(t > num_steps)):
        raise ContractError(f"diffusion step must lie in [1, {num_steps}]")
    half = dim // 2
    freqs = 10.0 ** (torch.arange(half, dtype=torch.float64) / max(half - 1, 1) * 4.0)
    angles = t.to(torch.float64)[..., None] * freqs
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


class StepEmbedding(nn.Module):
    def __init__(self, num_steps: int, dim: int = 128):
        super().__init__()
        self.num_steps = num_steps
        self.dim = dim
        self.fc1 = nn.Linear(dim, dim)
        self.fc2 = nn.Linear(dim, dim)

    def forward(self, t):
        x = diffusion_step_embedding(t, self.dim, self.num_steps).to(self.fc1.weight.dtype)
        return F.silu(self.fc2(F.silu(self.fc1(x))))


def cross_attention(x_in, U, axis, attn: Attention, positional=False):
    """Queries and keys from the condition ``U``, values from ``x_in``."""
    if U.shape != x_in.shape:
        raise ContractError(f"condition shape {tuple(U.shape)} != input shape {tuple(x_in.shape)}")
    u, v = to_sequences(U, axis), to_sequences(x_in, axis)
    if positional:
        pe = sinusoidal_encoding(u.shape[1], u.shape[2], u.dtype).to(u.device)
        u = u + pe
    return from_sequences(attn(u, u, v), x_in.shape, axis)


def self_attention(x_in, axis, attn: Attention, positional=False):
    s = to_sequences(x_in, axis)
    if positional:
        s = s + sinusoidal_encoding(s.shape[1], s.shape[2], s.dtype).to(s.device)
    return from_sequences(attn(s, s, s), x_in.shape, axis)


class GatedAttention(nn.Module):
    """``R = G * R_self + (1 - G) * R_cross`` with a learned sigmoid gate.

    With ``gated=False`` only the cross-attention branch exists.
    """

    def __init__(self, channels, heads, axis, gated=True, positional=False):
        super().__init__()
        self.axis = axis
        self.gated = gated
        self.positional = positional
        self.cross = Attention(channels, heads)
        if gated:
            self.self_attn = Attention(channels, heads)
            self.W_g1 = nn.Linear(channels, channels, bias=False)
            self.W_g2 = nn.Linear(channels, channels, bias=False)
            self.b_g = nn.Parameter(torch.zeros(channels))

    def gate(self, R_self, R_cross):
        pre = self.W_g1(R_self.transpose(1, -1)) + self.W_g2(R_cross.transpose(1, -1)) + self.b_g
        return torch.sigmoid(pre).transpose(1, -1)

    def forward(self, x_in, U, return_parts=False):
        R_cross = cross_attention(x_in, U, self.axis, self.cross, self.positional)
        if not self.gated:
            return (R_cross, None, R_cross, None) if return_parts else R_cross
        R_self = self_attention(x_in, self.axis, self.self_attn, self.positional)
        G = self.gate(R_self, R_cross)
        R = G * R_self + (1 - G) * R_cross
        return (R, R_self, R_cross, G) if return_parts else R


class NASTBlock(nn.Module):
    def __init__(
        self, adjacency, channels=64, heads=8, mlp_hidden=2048, gated=True,
        aux_block=False, d_state=64, positional=True,
    ):
        super().__init__()
        self.attn_tem = GatedAttention(channels, heads, TEMPORAL, gated, positional)
        self.attn_spa = GatedAttention(channels, heads, SPATIAL, gated)
        self.gcn = GraphConv(channels, adjacency)
        self.norm_gcn = ChannelNorm(channels)
        self.norm_spa = ChannelNorm(channels)
        self.norm_out = ChannelNorm(channels)
        self.mlp = ChannelMLP(channels, mlp_hidden)
        self.aux = AuxS4GCGRU(channels, adjacency, d_state) if aux_block else None

    def forward(self, x_in, U):
        X_tem = self.attn_tem(x_in, U)
        X_gcn = self.norm_gcn(self.gcn(X_tem) + X_tem)
        X_spa = self.norm_spa(self.attn_spa(X_tem, U) + X_tem)
        out = self.norm_out(self.mlp(X_gcn + X_spa))
        if self.aux is not None:
            out = self.aux(out)
        return out


class ResidualLayer(nn.Module):
    def __init__(self, adjacency, channels, emb_dim, **block_kw):
        super().__init__()
        self.step_proj = nn.Linear(emb_dim, channels)
        self.nast = NASTBlock(adjacency, channels, **block_kw)
        self.mid = nn.Conv2d(channels, 2 * channels, 1)
        self.out = nn.Conv2d(channels, 2 * channels, 1)

    def forward(self, x, emb, U):
        y = x + self.step_proj(emb)[:, :, None, None]
        y = self.mid(self.nast(y, U))
        gate, filt = y.chunk(2, dim=1)
        y = self.out(torch.sigmoid(gate) * torch.tanh(filt))
        residual, skip = y.chunk(2, dim=1)
        return (x + residual) / math.sqrt(2.0), skip


class Denoiser(nn.Module):
    """Predicts the noise on target entries.

    Input channels: noisy target, pre-imputation, target mask, condition mask.
    """

    def __init__(
        self, adjacency, num_steps, channels=64, layers=4, emb_dim=128, heads=8,
        mlp_hidden=2048, gated=True, aux_block=False, d_state=64, positional=True,
    ):
        super().__init__()
        self.embed = StepEmbedding(num_steps, emb_dim)
        self.lift = nn.Conv2d(4, channels, 1)
        self.layers = nn.ModuleList(
            ResidualLayer(
                adjacency, channels, emb_dim, heads=heads, mlp_hidden=mlp_hidden,
                gated=gated, aux_block=aux_block, d_state=d_state, positional=positional,
            )
            for _ in range(layers)
        )
        self.skip_proj = nn.Conv2d(channels, channels, 1)
        self.head = nn.Conv2d(channels, 1, 1)

    def forward(self, x_ta_t, t, X_c, M_ta, M_co, U):
        h = torch.stack([x_ta_t, X_c, M_ta, M_co], dim=1)
        h = F.relu(self.lift(h))
        emb = self.embed(t)
        skips = 0.0
        for layer in self.layers:
            h, skip = layer(h, emb, U)
            skips = skips + skip
        out = F.relu(self.skip_proj(skips / math.sqrt(len(self.layers))))
        return self.head(out).squeeze(1)
