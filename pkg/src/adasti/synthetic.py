"""Ring-graph benchmark used by the desk-scale experiments.

Each node carries a daily sinusoid with a node-specific phase, plus a shared
field that is smooth over the graph and AR(1) in time, plus white noise.
"""
from __future__ import annotations

import numpy as np

from .data import GraphSpec, RawSeriesTable, build_adjacency, ring_distances

PERIOD = 24
FIELD_RHO = 0.8
FIELD_STD = 0.5
SMOOTHING = 2.0


def ring_benchmark(
    num_nodes: int = 8,
    windows: int = 400,
    L: int = 24,
    noise: float = 0.1,
    seed: int = 0,
    threshold: float = 0.1,
) -> tuple[RawSeriesTable, GraphSpec]:
    rng = np.random.default_rng(seed)
    T = windows * L
    node_ids = [f"n{i}" for i in range(num_nodes)]
    graph = build_adjacency(ring_distances(num_nodes), threshold, node_ids)

    ring = np.zeros((num_nodes, num_nodes))
    for i in range(num_nodes):
        ring[i, (i + 1) % num_nodes] = ring[(i + 1) % num_nodes, i] = 1.0
    laplacian = np.diag(ring.sum(1)) - ring
    smoother = np.linalg.inv(np.eye(num_nodes) + SMOOTHING * laplacian)

    z = np.empty((T, num_nodes))
    z[0] = rng.standard_normal(num_nodes)
    innov = rng.standard_normal((T, num_nodes)) * np.sqrt(1 - FIELD_RHO**2)
    for t in range(1, T):
        z[t] = FIELD_RHO * z[t - 1] + innov[t]
    field = z @ smoother.T
    field *= FIELD_STD / field.std()

    t = np.arange(T)[:, None]
    phase = 2 * np.pi * np.arange(num_nodes)[None, :] / num_nodes
    values = np.sin(2 * np.pi * t / PERIOD + phase) + field
    values += noise * rng.standard_normal(values.shape)
    return RawSeriesTable(values, node_ids, np.arange(T)), graph
