"""Mean and temporal-linear-interpolation imputers on (N, L) matrices."""
from __future__ import annotations

import numpy as np
import torch


def baseline_mean(X, M) -> np.ndarray:
    """Fill each missing entry with its node's observed mean (global mean if none)."""
    X = np.asarray(X, dtype=np.float64)
    M = np.asarray(M) > 0
    counts = M.sum(axis=1)
    global_mean = X[M].mean() if M.any() else 0.0
    sums = np.where(M, X, 0.0).sum(axis=1)
    node_mean = np.where(counts > 0, sums / np.maximum(counts, 1), global_mean)
    return np.where(M, X, node_mean[:, None])


def baseline_tli(X, M) -> np.ndarray:
    """Per-node linear interpolation in time, constant beyond the edges.

    A node with no observations falls back to the mean imputer.
    """
    X = np.asarray(X, dtype=np.float64)
    obs = np.asarray(M) > 0
    out = baseline_mean(X, obs)
    t = np.arange(X.shape[1])
    for n in range(X.shape[0]):
        if obs[n].any():
            out[n] = np.where(obs[n], X[n], np.interp(t, t[obs[n]], X[n, obs[n]]))
    return out


def tli_batch(X: torch.Tensor, M: torch.Tensor) -> torch.Tensor:
    """TLI over a (B, N, L) batch; no gradient."""
    Xn = X.detach().cpu().double().numpy()
    Mn = M.detach().cpu().numpy()
    filled = np.stack([baseline_tli(x, m) for x, m in zip(Xn, Mn)])
    return torch.as_tensor(filled, dtype=X.dtype, device=X.device)
