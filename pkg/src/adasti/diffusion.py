"""Noise schedule, forward noising, training loss and ancestral sampling.

Steps are 1-based: ``t = 1..T`` indexes ``beta[t - 1]``. Everything is
restricted to target entries; non-target positions carry zeros.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ContractError


@dataclass
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_hat: np.ndarray


@dataclass
class ImputationResult:
    samples: np.ndarray  # (k, B, N, L) with observed entries restored
    median: np.ndarray  # (B, N, L)
    M_ta: np.ndarray


def make_schedule(T=50, beta_min=1e-4, beta_max=0.2, kind="quadratic") -> NoiseSchedule:
    if T < 1:
        raise ContractError("T must be >= 1")
    if not 0 < beta_min < beta_max < 1:
        raise ContractError("need 0 < beta_min < beta_max < 1")
    if kind == "linear":
        beta = np.linspace(beta_min, beta_max, T)
    elif kind == "quadratic":
        beta = np.linspace(beta_min**0.5, beta_max**0.5, T) ** 2
    else:
        raise ContractError(f"unknown schedule kind {kind!r}")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    prev = np.concatenate([[1.0], alpha_bar[:-1]])
    beta_hat = (1.0 - prev) / (1.0 - alpha_bar) * beta
    return NoiseSchedule(T, beta, alpha, alpha_bar, beta_hat)


def _check_step(t, T):
    tt = torch.as_tensor(t)
    if torch.any(tt < 1) or torch.any(tt > T):
        raise ContractError(f"step must lie in [1, {T}]")


def _coef(values: np.ndarray, t, like: torch.Tensor):
    """Schedule entry for step(s) ``t`` broadcastable against ``like``."""
    v = torch.as_tensor(values, dtype=like.dtype, device=like.device)
    tt = torch.as_tensor(t, device=like.device)
    out = v[tt - 1]
    return out.reshape(out.shape + (1,) * (like.dim() - out.dim())) if out.dim() else out


def q_sample(X0, M_ta, t, eps, sched: NoiseSchedule):
    """``sqrt(abar_t) X0 + sqrt(1 - abar_t) eps`` on targets, zero elsewhere.

    ``t`` may be an int or a per-sample tensor of shape (B,).
    """
    _check_step(t, sched.T)
    ab = _coef(sched.alpha_bar, t, X0)
    return (torch.sqrt(ab) * X0 + torch.sqrt(1.0 - ab) * eps) * M_ta


def reverse_step(x_t, eps_hat, t: int, z, sched: NoiseSchedule, M_ta=None, literal=False):
    """One ancestral step x_t -> x_{t-1}.

    The default uses the usual DDPM posterior
    ``(x_t - beta_t / sqrt(1 - abar_t) eps) / sqrt(alpha_t) + sqrt(beta_hat_t) z``.
    ``literal=True`` swaps in ``1/alpha_t``, ``sqrt(1 - alpha_t)`` and
    ``beta_hat_t = (1 - alpha_{t-1}) / (1 - alpha_t) beta_t`` (alpha_0 = 1).
    """
    _check_step(t, sched.T)
    t = int(t)
    beta, alpha = sched.beta[t - 1], sched.alpha[t - 1]
    if literal:
        alpha_prev = sched.alpha[t - 2] if t > 1 else 1.0
        mean = (x_t - beta / np.sqrt(1.0 - alpha) * eps_hat) / alpha
        var = (1.0 - alpha_prev) / (1.0 - alpha) * beta
    else:
        mean = (x_t - beta / np.sqrt(1.0 - sched.alpha_bar[t - 1]) * eps_hat) / np.sqrt(alpha)
        var = sched.beta_hat[t - 1]
    out = mean if t == 1 else mean + np.sqrt(var) * z
    return out if M_ta is None else out * M_ta


def diffusion_terms(model, X, M_ta, M_co, sched: NoiseSchedule, generator: torch.Generator):
    """Noise-prediction loss plus the pre-imputation it was computed from.

    ``model`` needs ``pre_impute``, ``condition`` and ``denoise``. Targets are
    hidden from the pre-imputation (it only sees ``M_co``).
    """
    n_ta = M_ta.sum()
    if n_ta == 0:
        raise ContractError("no target entries")
    pre = model.pre_impute(X * M_co, M_co)
    cond = model.condition(pre.X_c)
    B = X.shape[0]
    t = torch.randint(1, sched.T + 1, (B,), generator=generator)
    eps = torch.randn(X.shape, generator=generator, dtype=X.dtype)
    x_t = q_sample(X, M_ta, t, eps, sched)
    eps_hat = model.denoise(x_t, t, pre.X_c, M_ta, M_co, cond.U)
    loss = (torch.square(eps - eps_hat) * M_ta).sum() / n_ta
    return loss, pre


def diffusion_training_loss(model, X, M_ta, M_co, sched, generator):
    return diffusion_terms(model, X, M_ta, M_co, sched, generator)[0]


def repetition_generator(seed: int, rep: int) -> torch.Generator:
    state = np.random.SeedSequence([int(seed), int(rep)]).generate_state(2, dtype=np.uint32)
    return torch.Generator().manual_seed(int(state[0]) << 32 | int(state[1]))


@torch.no_grad()
def impute(model, X, M, sched: NoiseSchedule, k: int = 100, seed: int = 0,
           literal=False, max_batch: int = 512) -> ImputationResult:
    """Median-of-k ancestral sampling over a (B, N, L) batch.

    Every repetition owns a noise stream derived from ``(seed, rep)``, so the
    result does not depend on how repetitions are grouped into batches.
    """
    if k <= 0:
        raise ContractError("k must be positive")
    X = X * M
    M_ta, M_co = 1.0 - M, M
    pre = model.pre_impute(X, M_co)
    U = model.condition(pre.X_c).U
    B = X.shape[0]
    per_chunk = max(1, max_batch // B)
    samples = []
    for start in range(0, k, per_chunk):
        reps = range(start, min(k, start + per_chunk))
        noise = []
        for r in reps:
            g = repetition_generator(seed, r)
            noise.append(torch.randn((sched.T,) + tuple(X.shape), generator=g, dtype=X.dtype))
        noise = torch.cat(noise, dim=1)  # (T, len(reps) * B, N, L)
        n = len(reps)
        rep = lambda a: a.repeat((n,) + (1,) * (a.dim() - 1))  # noqa: E731
        Xc, Uc, ta, co = rep(pre.X_c), rep(U), rep(M_ta), rep(M_co)
        x = noise[0] * ta
        for t in range(sched.T, 0, -1):
            tt = torch.full((x.shape[0],), t, dtype=torch.long)
            eps_hat = model.denoise(x, tt, Xc, ta, co, Uc)
            z = noise[t - 1] if t > 1 else None
            x = reverse_step(x, eps_hat, t, z, sched, ta, literal)
        samples.append(x.reshape((n,) + tuple(X.shape)))
    samples = torch.cat(samples).cpu().double().numpy()
    Xn, Mn = X.cpu().double().numpy(), M.cpu().numpy()
    samples = np.where(Mn > 0, Xn, samples)
    median = np.where(Mn > 0, Xn, np.median(samples, axis=0))
    return ImputationResult(samples, median, M_ta.cpu().numpy())
