"""The full imputer: pre-imputation, conditionalizer and noise predictor."""
from __future__ import annotations

import torch
import torch.nn as nn

from .baselines import tli_batch
from .bis4pi import BiS4PI, PreImputation, consistency_loss, reconstruction_loss
from .config import ModelConfig
from .nast import Denoiser
from .stc import STC, ConditionInfo


class AdaSTI(nn.Module):
    def __init__(self, cfg: ModelConfig, adjacency):
        super().__init__()
        self.cfg = cfg
        num_nodes = len(adjacency)
        self.bis4pi = None
        if not cfg.no_bis4pi:
            self.bis4pi = BiS4PI(
                num_nodes, cfg.d_state, cfg.attn_width, cfg.heads, cfg.shared_directions
            )
        self.stc = STC(
            adjacency, cfg.channels, cfg.heads, cfg.mlp_hidden, cfg.stc_conv_kernel,
            cfg.positional, aux_block=cfg.aux_s4_gcgru_placement == "stc", d_state=cfg.d_state,
        )
        self.denoiser = Denoiser(
            adjacency, cfg.num_steps, cfg.channels, cfg.layers, cfg.emb_dim, cfg.heads,
            cfg.mlp_hidden, gated=not cfg.no_gated_attention,
            aux_block=cfg.aux_s4_gcgru_placement == "nast", d_state=cfg.d_state,
            positional=cfg.positional,
        )

    def pre_impute(self, X, M) -> PreImputation:
        if self.bis4pi is None:
            return PreImputation(tli_batch(X * M, M))
        return self.bis4pi(X, M)

    def condition(self, X_c) -> ConditionInfo:
        return self.stc(X_c)

    def denoise(self, x_ta_t, t, X_c, M_ta, M_co, U):
        return self.denoiser(x_ta_t, t, X_c, M_ta, M_co, U)

    def auxiliary_loss(self, X, M, pre: PreImputation, literal=False):
        """``l_rec^f + l_rec^b + l_cons``; zero when pre-imputation is not learned."""
        if pre.trace_f is None:
            return X.new_zeros(())
        return (
            reconstruction_loss(X, M, pre.trace_f, literal)
            + reconstruction_loss(X, M, pre.trace_b, literal)
            + consistency_loss(pre, M)
        )
