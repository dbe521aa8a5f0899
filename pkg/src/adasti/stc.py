"""Spatio-temporal conditionalizer: pre-imputed series -> condition tensor U."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .layers import (
    SPATIAL,
    TEMPORAL,
    AuxS4GCGRU,
    AxisSelfAttention,
    ChannelMLP,
    ChannelNorm,
    GraphConv,
)


@dataclass
class ConditionInfo:
    U: torch.Tensor  # (B, C_h, N, L)
    intermediates: dict = field(default_factory=dict)


class STC(nn.Module):
    def __init__(
        self,
        adjacency,
        channels=64,
        heads=8,
        mlp_hidden=2048,
        conv_kernel=1,
        positional=True,
        aux_block=False,
        d_state=64,
    ):
        super().__init__()
        self.lift = nn.Conv2d(1, channels, (1, conv_kernel), padding=(0, conv_kernel // 2))
        self.attn_tem = AxisSelfAttention(channels, heads, TEMPORAL, positional=positional)
        self.attn_spa = AxisSelfAttention(channels, heads, SPATIAL)
        self.gcn = GraphConv(channels, adjacency)
        self.norm_tem = ChannelNorm(channels)
        self.norm_gcn = ChannelNorm(channels)
        self.norm_spa = ChannelNorm(channels)
        self.norm_out = ChannelNorm(channels)
        self.mlp = ChannelMLP(channels, mlp_hidden)
        self.aux = AuxS4GCGRU(channels, adjacency, d_state) if aux_block else None

    def forward(self, X_c, keep_intermediates=False) -> ConditionInfo:
        U_in = self.lift(X_c.unsqueeze(1))
        Y_tem = self.norm_tem(self.attn_tem(U_in) + U_in)
        Y_gcn = self.norm_gcn(self.gcn(Y_tem) + U_in)
        Y_spa = self.norm_spa(self.attn_spa(Y_tem) + U_in)
        Y_sum = U_in + Y_tem + Y_gcn + Y_spa
        U = self.norm_out(self.mlp(Y_sum) + Y_sum)
        if self.aux is not None:
            U = self.aux(U)
        extra = {}
        if keep_intermediates:
            extra = dict(U_in=U_in, Y_tem=Y_tem, Y_gcn=Y_gcn, Y_spa=Y_spa, Y_sum=Y_sum)
        return ConditionInfo(U, extra)
