"""Dataset ingestion, graph construction, windowing and mask generation.

Conventions: a mask holds 1 for observed entries and 0 for missing ones.
Matrices are laid out nodes x timestamps once windowed; raw tables are
timestamps x nodes, as they come out of a CSV.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, DegenerateGeometryError, NormalizationError, ParseError


@dataclass
class RawSeriesTable:
    values: np.ndarray  # (timestamps, nodes), NaN where natively missing
    node_ids: list[str]
    timestamps: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.timestamps = np.asarray(self.timestamps)
        if self.values.ndim != 2:
            raise ContractError("values must be a timestamps x nodes matrix")
        if self.values.shape != (len(self.timestamps), len(self.node_ids)):
            raise ContractError(
                f"values shape {self.values.shape} does not match "
                f"{len(self.timestamps)} timestamps x {len(self.node_ids)} nodes"
            )
        if len(set(self.node_ids)) != len(self.node_ids):
            raise ContractError("node ids must be unique")
        if len(self.timestamps) > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise ContractError("timestamps must be strictly increasing")

    @property
    def mask(self) -> np.ndarray:
        return (~np.isnan(self.values)).astype(np.float64)

    @property
    def shape(self):
        return self.values.shape


@dataclass
class GraphSpec:
    adjacency: np.ndarray
    node_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        n = self.adjacency.shape[0]
        if self.adjacency.shape != (n, n):
            raise ContractError("adjacency must be square")
        if not self.node_ids:
            self.node_ids = [str(i) for i in range(n)]
        if len(self.node_ids) != n:
            raise ContractError("node_ids length does not match adjacency")

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray


@dataclass
class MaskedSample:
    X: np.ndarray  # (N, L), zero where M == 0
    M: np.ndarray  # (N, L) in {0, 1}
    norm_stats: NormStats
    start: int = 0

    @property
    def shape(self):
        return self.X.shape


@dataclass
class MaskPair:
    M_ta: np.ndarray
    M_co: np.ndarray


# --------------------------------------------------------------------------
# ingestion


def load_series_csv(path, missing_token: str = "NA") -> RawSeriesTable:
    """Read a CSV whose header holds node ids and whose rows are timestamps.

    An optional leading column named ``timestamp`` (or ``time``) supplies the
    time index; otherwise rows are numbered 0..T-1. Cells equal to
    ``missing_token`` (or empty) become NaN.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        header = [h.strip() for h in header]
        has_time = header[0].lower() in ("timestamp", "time")
        node_ids = header[1:] if has_time else header
        width = len(header)
        rows, times = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise ParseError(f"expected {width} cells, found {len(row)}", line=lineno)
            cells = row[1:] if has_time else row
            if has_time:
                try:
                    times.append(float(row[0]))
                except ValueError:
                    raise ParseError(f"non-numeric timestamp {row[0]!r}", line=lineno) from None
            parsed = []
            for cell in cells:
                cell = cell.strip()
                if cell == missing_token or cell == "":
                    parsed.append(math.nan)
                    continue
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ParseError(f"non-numeric cell {cell!r}", line=lineno) from None
            rows.append(parsed)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(node_ids))
    timestamps = np.array(times) if has_time else np.arange(len(rows))
    return RawSeriesTable(values, list(node_ids), timestamps)


def save_series_csv(path, values: np.ndarray, node_ids: Sequence[str], missing_token="NA"):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(node_ids)
        for row in np.asarray(values):
            writer.writerow([missing_token if np.isnan(v) else repr(float(v)) for v in row])


def load_matrix_csv(path, header: bool | None = None) -> np.ndarray:
    """Plain numeric matrix (distances, adjacency or a 0/1 mask file).

    A first row that does not parse as numbers is treated as a header.
    """
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ParseError("empty file", line=1)
    if header is None:
        try:
            [float(c) for c in rows[0]]
            header = False
        except ValueError:
            header = True
    body = rows[1:] if header else rows
    width = len(body[0]) if body else 0
    out = []
    for lineno, row in enumerate(body, start=2 if header else 1):
        if len(row) != width:
            raise ParseError(f"expected {width} cells, found {len(row)}", line=lineno)
        try:
            out.append([float(c) for c in row])
        except ValueError:
            raise ParseError("non-numeric cell", line=lineno) from None
    return np.array(out, dtype=np.float64)


def save_mask_csv(path, mask: np.ndarray, node_ids: Sequence[str] | None = None):
    """Write a 0/1 mask laid out timestamps x nodes."""
    mask = np.asarray(mask)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        if node_ids is not None:
            writer.writerow(node_ids)
        for row in mask.astype(int):
            writer.writerow(row.tolist())


# --------------------------------------------------------------------------
# graph


def build_adjacency(distances, threshold: float = 0.1, node_ids=None) -> GraphSpec:
    """Thresholded Gaussian kernel ``exp(-d^2 / sigma^2)``.

    sigma is the standard deviation of the off-diagonal distances.
    """
    d = np.asarray(distances, dtype=np.float64)
    n = d.shape[0]
    if d.shape != (n, n):
        raise ContractError("distance matrix must be square")
    if not 0.0 <= threshold < 1.0:
        raise ContractError("threshold must lie in [0, 1)")
    if np.any(d < 0) or not np.allclose(d, d.T) or np.any(np.diag(d) != 0):
        raise ContractError("distances must be symmetric, nonnegative, zero diagonal")
    off = ~np.eye(n, dtype=bool)
    sigma = d[off].std() if n > 1 else 0.0
    if sigma == 0.0:
        raise DegenerateGeometryError("all off-diagonal distances are identical (sigma = 0)")
    adj = np.exp(-np.square(d / sigma))
    adj[adj < threshold] = 0.0
    np.fill_diagonal(adj, 0.0)
    return GraphSpec(adj, list(node_ids) if node_ids is not None else [])


def ring_distances(n: int) -> np.ndarray:
    """Hop distance between nodes placed on a ring."""
    idx = np.arange(n)
    gap = np.abs(idx[:, None] - idx[None, :])
    return np.minimum(gap, n - gap).astype(np.float64)


# --------------------------------------------------------------------------
# windowing / normalization


def fit_norm_stats(values: np.ndarray, mask: np.ndarray, node_ids=None) -> NormStats:
    """Per-node mean/std over observed entries. ``values`` is timestamps x nodes."""
    values = np.where(mask > 0, values, 0.0)
    counts = mask.sum(axis=0)
    for j, c in enumerate(counts):
        if c == 0:
            raise NormalizationError(node_ids[j] if node_ids is not None else j)
    mean = values.sum(axis=0) / counts
    var = (np.square(values - mean) * mask).sum(axis=0) / counts
    std = np.sqrt(var)
    std[std == 0] = 1.0
    return NormStats(mean, std)


def window_and_normalize(
    table: RawSeriesTable,
    L: int = 24,
    stride: int | None = None,
    mask: np.ndarray | None = None,
    train_end: int | None = None,
    stats: NormStats | None = None,
) -> list[MaskedSample]:
    """Cut the table into length-L windows of z-scored values.

    ``mask`` (timestamps x nodes) is combined with the table's native
    missingness. Statistics come from observed entries of rows
    ``[0, train_end)`` unless ``stats`` is passed explicitly.
    """
    stride = L if stride is None else stride
    T = table.values.shape[0]
    if L > T:
        raise ContractError(f"window length {L} exceeds series length {T}")
    if stride <= 0:
        raise ContractError("stride must be positive")
    M = table.mask if mask is None else table.mask * np.asarray(mask, dtype=np.float64)
    if stats is None:
        end = T if train_end is None else train_end
        stats = fit_norm_stats(table.values[:end], M[:end], table.node_ids)
    Z = np.where(M > 0, (np.nan_to_num(table.values) - stats.mean) / stats.std, 0.0)
    samples = []
    for s in range(0, T - L + 1, stride):
        samples.append(
            MaskedSample(
                X=Z[s : s + L].T.copy(),
                M=M[s : s + L].T.copy(),
                norm_stats=stats,
                start=s,
            )
        )
    return samples


def denormalize(sample: MaskedSample, values) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != sample.X.shape:
        raise ContractError(f"shape {values.shape} does not match sample {sample.X.shape}")
    st = sample.norm_stats
    return values * st.std[:, None] + st.mean[:, None]


# --------------------------------------------------------------------------
# masks


def sample_rng(seed: int, *index: int) -> np.random.Generator:
    """Independent stream for (seed, index...) so parallel and serial runs agree."""
    return np.random.default_rng([int(seed), *map(int, index)])


def generate_random_mask(shape, rate: float, seed: int) -> np.ndarray:
    if not 0.0 < rate < 1.0:
        raise ContractError("rate must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    return (rng.random(shape) >= rate).astype(np.float64)


def block_nodes(adjacency: np.ndarray, seed_node: int, n_v: int) -> list[int]:
    """Seed node plus its ``n_v - 1`` strongest neighbours.

    If the seed has fewer than ``n_v - 1`` positively weighted neighbours the
    block keeps growing from whichever outside node is most strongly tied to
    the nodes already in it, so the block stays connected where possible.
    """
    weights = adjacency[seed_node].copy()
    weights[seed_node] = -np.inf
    order = np.argsort(-weights, kind="stable")
    chosen = [seed_node] + [int(j) for j in order[: n_v - 1] if weights[j] > 0]
    while len(chosen) < n_v:
        outside = np.setdiff1d(np.arange(adjacency.shape[0]), chosen)
        tie = adjacency[np.ix_(chosen, outside)].max(axis=0)
        chosen.append(int(outside[np.argmax(tie)]))
    return chosen


def generate_block_mask(
    shape, rate: float, n_v: int, n_t: int, graph: GraphSpec, seed: int
) -> np.ndarray:
    """Drop (n_v adjacent nodes) x (n_t consecutive timestamps) blocks until
    the missing fraction reaches ``rate``. Shape is (N, L)."""
    N, L = shape
    if not 0.0 < rate < 1.0:
        raise ContractError("rate must lie in (0, 1)")
    if not (1 <= n_v <= N and 1 <= n_t <= L):
        raise ContractError("block size must fit inside the sample")
    if graph.num_nodes != N:
        raise ContractError("graph node count does not match mask shape")
    rng = np.random.default_rng(seed)
    mask = np.ones((N, L))
    while 1.0 - mask.mean() < rate:
        node = int(rng.integers(N))
        t0 = int(rng.integers(L - n_t + 1))
        mask[block_nodes(graph.adjacency, node, n_v), t0 : t0 + n_t] = 0.0
    return mask


def split_target_condition(M, target_fraction: float = 0.1, seed=0) -> MaskPair:
    """Pick ``ceil(fraction * |observed|)`` observed entries as training targets.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    M = np.asarray(M, dtype=np.float64)
    if not 0.0 < target_fraction < 1.0:
        raise ContractError("target_fraction must lie in (0, 1)")
    observed = np.flatnonzero(M.ravel() > 0)
    if observed.size == 0:
        raise ContractError("mask has no observed entries")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k = math.ceil(target_fraction * observed.size)
    picked = rng.choice(observed, size=k, replace=False)
    M_ta = np.zeros(M.size)
    M_ta[picked] = 1.0
    M_ta = M_ta.reshape(M.shape)
    return MaskPair(M_ta=M_ta, M_co=M - M_ta)


def evaluation_pair(M) -> MaskPair:
    """At imputation time every missing entry is a target."""
    M = np.asarray(M, dtype=np.float64)
    return MaskPair(M_ta=1.0 - M, M_co=M.copy())
