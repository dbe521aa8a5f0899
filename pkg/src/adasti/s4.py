"""State-space sequence layer: HiPPO init, bilinear discretization, kernels.

All functions accept leading batch dimensions on the system matrices, so a
stack of per-channel SSMs (A of shape ``(H, d, d)``) is handled in one call.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import ContractError, NumericalError


@dataclass
class SSMParams:
    A: torch.Tensor  # (..., d, d)
    B: torch.Tensor  # (..., d, 1)
    C: torch.Tensor  # (..., 1, d)
    step: torch.Tensor | float


@dataclass
class DiscreteSSM:
    A_bar: torch.Tensor
    B_bar: torch.Tensor
    C_bar: torch.Tensor


def hippo_init(d: int) -> np.ndarray:
    """HiPPO-LegS state matrix.

    ``A[n, k] = -sqrt(2n+1) sqrt(2k+1)`` below the diagonal, ``-(n+1)`` on it,
    zero above.
    """
    if d < 1:
        raise ContractError("state dimension must be >= 1")
    n = np.arange(d)[:, None]
    k = np.arange(d)[None, :]
    scale = np.sqrt(2 * n + 1.0) * np.sqrt(2 * k + 1.0)
    return np.where(n > k, -scale, np.where(n == k, -(n + 1.0), 0.0))


def discretize(params: SSMParams) -> DiscreteSSM:
    """Bilinear (Tustin) transform of the continuous system."""
    A, B = params.A, params.B
    step = torch.as_tensor(params.step, dtype=A.dtype, device=A.device)
    if torch.any(step <= 0):
        raise ContractError("step must be positive")
    half = (step / 2.0).reshape(step.shape + (1, 1)) if step.dim() else step / 2.0
    eye = torch.eye(A.shape[-1], dtype=A.dtype, device=A.device)
    lhs = eye - half * A
    rhs = torch.cat([eye + half * A, 2.0 * half * B], dim=-1).expand(*lhs.shape[:-1], -1)
    try:
        sol = torch.linalg.solve(lhs, rhs)
    except RuntimeError as err:  # torch raises LinAlgError (a RuntimeError) when singular
        cond = torch.linalg.cond(lhs.detach()).max().item()
        raise NumericalError(f"I - (step/2) A is singular (condition ~ {cond:.3g})") from err
    if not torch.isfinite(sol).all():
        cond = torch.linalg.cond(lhs.detach()).max().item()
        raise NumericalError(f"I - (step/2) A is ill-conditioned (condition ~ {cond:.3g})")
    d = A.shape[-1]
    return DiscreteSSM(A_bar=sol[..., :d], B_bar=sol[..., d:], C_bar=params.C)


def compute_kernel(ssm: DiscreteSSM, L: int) -> torch.Tensor:
    """Taps ``C A^i B`` for i < L by propagating ``A^i B`` forward.

    Returns shape ``(..., L)``.
    """
    if L < 1:
        raise ContractError("kernel length must be >= 1")
    v = ssm.B_bar
    taps = []
    for _ in range(L):
        taps.append((ssm.C_bar @ v)[..., 0, 0])
        v = ssm.A_bar @ v
    K = torch.stack(taps, dim=-1)
    if not torch.isfinite(K).all():
        raise NumericalError("kernel overflowed; the discretized system is unstable")
    return K


def s4_apply_conv(u: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    """Causal convolution ``y_t = sum_{i<=t} K_i u_{t-i}`` along the last axis (FFT)."""
    L = u.shape[-1]
    if kernel.shape[-1] != L:
        raise ContractError(f"kernel length {kernel.shape[-1]} != sequence length {L}")
    n = 2 * L
    y = torch.fft.irfft(torch.fft.rfft(u, n=n) * torch.fft.rfft(kernel, n=n), n=n)
    return y[..., :L]


def s4_apply_recurrent(u: torch.Tensor, ssm: DiscreteSSM) -> torch.Tensor:
    """Unrolled recursion ``x_t = A x_{t-1} + B u_t, y_t = C x_t``.

    ``u`` has shape ``(..., L)`` with leading dims broadcasting against the
    system's batch dims.
    """
    batch = torch.broadcast_shapes(u.shape[:-1], ssm.A_bar.shape[:-2])
    x = torch.zeros(*batch, ssm.A_bar.shape[-1], 1, dtype=u.dtype, device=u.device)
    ys = []
    for t in range(u.shape[-1]):
        x = ssm.A_bar @ x + ssm.B_bar * u[..., t, None, None]
        ys.append((ssm.C_bar @ x)[..., 0, 0])
    return torch.stack(ys, dim=-1)


class S4Layer(nn.Module):
    """One independent SSM per channel, applied along the last (time) axis.

    Input/output shape ``(..., channels, L)``. A, B, C and the log step are
    all trainable; the kernel is rebuilt on every forward call.
    """

    def __init__(self, channels: int, d_state: int = 64, dt_min=1e-3, dt_max=1e-1):
        super().__init__()
        self.channels = channels
        self.d_state = d_state
        A = torch.as_tensor(hippo_init(d_state), dtype=torch.float32)
        self.A = nn.Parameter(A.repeat(channels, 1, 1))
        self.B = nn.Parameter(torch.ones(channels, d_state, 1) / math.sqrt(d_state))
        self.C = nn.Parameter(torch.randn(channels, 1, d_state) / math.sqrt(d_state))
        u = torch.rand(channels)
        self.log_step = nn.Parameter(
            math.log(dt_min) + u * (math.log(dt_max) - math.log(dt_min))
        )

    def discrete(self) -> DiscreteSSM:
        return discretize(SSMParams(self.A, self.B, self.C, torch.exp(self.log_step)))

    def kernel(self, L: int) -> torch.Tensor:
        return compute_kernel(self.discrete(), L)

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        return s4_apply_conv(u, self.kernel(u.shape[-1]))
