"""Bidirectional S4 pre-imputation.

Each direction runs linear fill -> S4 -> replace -> node attention ->
replace -> S4 -> replace. The two directional fills are averaged on
missing entries. Inputs are ``(batch, nodes, time)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ContractError, UndefinedLossError
from .s4 import S4Layer

FORWARD = "forward"
BACKWARD = "backward"


@dataclass
class DirectionalTrace:
    Y_c: torch.Tensor
    H: torch.Tensor
    H_c: torch.Tensor
    C: torch.Tensor
    C_c: torch.Tensor
    X_hat: torch.Tensor
    X_c_dir: torch.Tensor

    def flipped(self) -> "DirectionalTrace":
        return DirectionalTrace(*(t.flip(-1) for t in vars(self).values()))


@dataclass
class PreImputation:
    X_c: torch.Tensor
    trace_f: DirectionalTrace | None = None
    trace_b: DirectionalTrace | None = None


def masked_replace(X, M, H):
    """Keep observed entries of ``X``; take ``H`` elsewhere."""
    if X.shape != M.shape or X.shape != H.shape:
        raise ContractError(f"shape mismatch: {tuple(X.shape)}, {tuple(M.shape)}, {tuple(H.shape)}")
    return torch.where(M > 0, X, H)


def linear_fill(X, weight, bias):
    """Affine map across the node axis at every timestamp: ``W X + b``."""
    return torch.einsum("nm,...ml->...nl", weight, X) + bias[:, None]


class FeatureAttention(nn.Module):
    """Transformer encoder layer whose tokens are the nodes at one timestamp.

    A token is the node's value concatenated with a learned node embedding,
    projected to ``width``.
    """

    def __init__(self, num_nodes, width=64, heads=8, node_dim=16, ff_dim=None):
        super().__init__()
        self.node_emb = nn.Parameter(torch.randn(num_nodes, node_dim) * 0.1)
        self.proj_in = nn.Linear(1 + node_dim, width)
        self.encoder = nn.TransformerEncoderLayer(
            width, heads, dim_feedforward=ff_dim or width, dropout=0.0,
            activation="gelu", batch_first=True,
        )
        self.proj_out = nn.Linear(width, 1)

    def forward(self, H_c):  # (B, N, L)
        B, N, L = H_c.shape
        vals = H_c.transpose(1, 2).reshape(B * L, N, 1)
        emb = self.node_emb.to(vals.dtype).expand(B * L, N, -1)
        tok = self.proj_in(torch.cat([vals, emb], dim=-1))
        out = self.proj_out(self.encoder(tok))
        return out.reshape(B, L, N).transpose(1, 2)


class DirectionalNet(nn.Module):
    def __init__(self, num_nodes, d_state=64, attn_width=64, heads=8):
        super().__init__()
        self.fill = nn.Linear(num_nodes, num_nodes)
        with torch.no_grad():
            self.fill.weight.copy_(torch.eye(num_nodes))
            self.fill.bias.zero_()
        self.s4_first = S4Layer(num_nodes, d_state)
        self.attention = FeatureAttention(num_nodes, attn_width, heads)
        self.s4_second = S4Layer(num_nodes, d_state)

    def forward(self, X, M) -> DirectionalTrace:
        X = X * M
        Y_c = linear_fill(X, self.fill.weight, self.fill.bias)
        H = self.s4_first(Y_c)
        H_c = masked_replace(X, M, H)
        C = self.attention(H_c)
        C_c = masked_replace(X, M, C)
        X_hat = self.s4_second(C_c)
        return DirectionalTrace(Y_c, H, H_c, C, C_c, X_hat, masked_replace(X, M, X_hat))


class BiS4PI(nn.Module):
    """Forward and backward directional nets; separate weights unless ``shared``."""

    def __init__(self, num_nodes, d_state=64, attn_width=64, heads=8, shared=False):
        super().__init__()
        self.net_f = DirectionalNet(num_nodes, d_state, attn_width, heads)
        self.net_b = self.net_f if shared else DirectionalNet(num_nodes, d_state, attn_width, heads)

    def directional(self, X, M, direction=FORWARD) -> DirectionalTrace:
        if direction == FORWARD:
            return self.net_f(X, M)
        if direction == BACKWARD:
            return self.net_b(X.flip(-1), M.flip(-1)).flipped()
        raise ValueError(f"unknown direction {direction!r}")

    def forward(self, X, M) -> PreImputation:
        f = self.directional(X, M, FORWARD)
        b = self.directional(X, M, BACKWARD)
        X_c = masked_replace(X * M, M, (f.X_c_dir + b.X_c_dir) / 2)
        return PreImputation(X_c, f, b)


def _observed_mae(target, pred, M):
    n = M.sum()
    if n == 0:
        raise UndefinedLossError("no observed entries to reconstruct")
    return ((target - pred).abs() * M).sum() / n


def reconstruction_loss(X, M, trace: DirectionalTrace, literal=False):
    """Sum of three observed-entry MAEs along one direction.

    By default the stages are compared before masked replacement (H, C,
    X_hat); after replacement the first two stages equal X on observed
    entries and contribute nothing. ``literal=True`` uses H_c and C_c.
    """
    first, second = (trace.H_c, trace.C_c) if literal else (trace.H, trace.C)
    X = X * M
    return (
        _observed_mae(X, first, M)
        + _observed_mae(X, second, M)
        + _observed_mae(X, trace.X_hat, M)
    )


def consistency_loss(pre: PreImputation, M):
    """MAE between the two directional fills over missing entries (0 if none)."""
    miss = 1.0 - M
    n = miss.sum()
    diff = (pre.trace_f.X_c_dir - pre.trace_b.X_c_dir).abs() * miss
    if n == 0:
        return diff.sum() * 0.0
    return diff.sum() / n
