import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adasti.data import (
    GraphSpec,
    MaskedSample,
    NormStats,
    RawSeriesTable,
    block_nodes,
    build_adjacency,
    denormalize,
    evaluation_pair,
    generate_block_mask,
    generate_random_mask,
    load_series_csv,
    ring_distances,
    split_target_condition,
    window_and_normalize,
)
from adasti.errors import (
    ContractError,
    DegenerateGeometryError,
    NormalizationError,
    ParseError,
)


# ---------------------------------------------------------------- CSV


def test_load_plain_csv(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,c\n1,2,3\n4,5,6\n7,8,9\n10,11,12\n")
    table = load_series_csv(p)
    assert table.shape == (4, 3)
    assert table.node_ids == ["a", "b", "c"]
    assert table.mask.sum() == 12


def test_missing_token_flags_entry(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b\n1,NA\n3,4\n")
    table = load_series_csv(p, missing_token="NA")
    assert table.mask.tolist() == [[1, 0], [1, 1]]


def test_ragged_row_names_line(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,c\n1,2,3\n4,5\n")
    with pytest.raises(ParseError) as err:
        load_series_csv(p)
    assert err.value.line == 3


def test_non_numeric_cell(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b\n1,x\n")
    with pytest.raises(ParseError):
        load_series_csv(p)


def test_timestamp_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("timestamp,a\n10,1\n20,2\n")
    table = load_series_csv(p)
    assert table.timestamps.tolist() == [10, 20]
    assert table.node_ids == ["a"]


def test_table_invariants():
    with pytest.raises(ContractError):
        RawSeriesTable(np.zeros((2, 2)), ["a", "a"], np.arange(2))
    with pytest.raises(ContractError):
        RawSeriesTable(np.zeros((2, 2)), ["a", "b"], np.array([1, 1]))


# ---------------------------------------------------------------- adjacency


def kernel_oracle(d, threshold):
    n = len(d)
    off = [d[i][j] for i in range(n) for j in range(n) if i != j]
    mu = sum(off) / len(off)
    sigma = math.sqrt(sum((x - mu) ** 2 for x in off) / len(off))
    out = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i != j:
                w = math.exp(-(d[i][j] ** 2) / sigma**2)
                out[i][j] = w if w >= threshold else 0.0
    return np.array(out)


def test_adjacency_matches_kernel_oracle():
    rng = np.random.default_rng(3)
    pts = rng.random((4, 2))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    graph = build_adjacency(d, 0.1)
    np.testing.assert_allclose(graph.adjacency, kernel_oracle(d.tolist(), 0.1), atol=1e-12, rtol=0)


def test_adjacency_closed_forms():
    # off-diagonal values {1 + 3/sqrt(2), 1, 1} have standard deviation exactly 1
    far = 1 + 3 / math.sqrt(2)
    d = np.array([[0, far, 1], [far, 0, 1], [1, 1, 0]])
    g = build_adjacency(d, 0.1)
    assert g.adjacency[0, 2] == pytest.approx(math.exp(-1), abs=1e-12)
    assert g.adjacency[0, 2] == pytest.approx(0.3679, abs=1e-4)
    # coincident distinct nodes get full weight
    d0 = np.array([[0, 0, 2], [0, 0, 2], [2, 2, 0]], dtype=float)
    assert build_adjacency(d0, 0.0).adjacency[0, 1] == 1.0


def test_degenerate_geometry():
    d = np.ones((3, 3)) - np.eye(3)
    with pytest.raises(DegenerateGeometryError):
        build_adjacency(d)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 9), st.integers(0, 10_000), st.floats(0.0, 0.9))
def test_adjacency_invariants(n, seed, threshold):
    rng = np.random.default_rng(seed)
    pts = rng.random((n, 2))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    np.fill_diagonal(d, 0.0)
    a = build_adjacency(d, threshold).adjacency
    assert np.array_equal(a, a.T)
    assert np.all(np.diag(a) == 0)
    assert np.all((a == 0) | (a >= threshold))
    assert np.all((a >= 0) & (a <= 1))
    # thresholding again changes nothing
    again = np.where(a < threshold, 0.0, a)
    assert np.array_equal(again, a)


# ---------------------------------------------------------------- windows


def make_table(T=100, N=3, seed=0):
    rng = np.random.default_rng(seed)
    return RawSeriesTable(rng.normal(5, 2, (T, N)), [f"n{i}" for i in range(N)], np.arange(T))


def test_window_count():
    assert len(window_and_normalize(make_table(100), L=24, stride=24)) == 4


def test_constant_node_normalizes_to_zero():
    values = np.column_stack([np.full(30, 7.0), np.arange(30.0)])
    table = RawSeriesTable(values, ["c", "r"], np.arange(30))
    samples = window_and_normalize(table, L=10)
    assert all(np.all(s.X[0] == 0) for s in samples)
    assert samples[0].norm_stats.std[0] == 1.0


def test_native_missing_gets_zero_mask():
    table = make_table(30)
    table.values[3, 1] = np.nan
    s = window_and_normalize(table, L=10)[0]
    assert s.M[1, 3] == 0 and s.X[1, 3] == 0


def test_node_without_training_observations():
    table = make_table(30)
    table.values[:20, 2] = np.nan
    with pytest.raises(NormalizationError) as err:
        window_and_normalize(table, L=10, train_end=20)
    assert err.value.node == "n2"


def test_window_too_long():
    with pytest.raises(ContractError):
        window_and_normalize(make_table(10), L=11)


def test_denormalize_roundtrip():
    table = make_table(96, 4, seed=11)
    for s in window_and_normalize(table, L=24):
        back = denormalize(s, s.X)
        orig = table.values[s.start : s.start + 24].T
        np.testing.assert_allclose(back, orig, atol=1e-10, rtol=0)


def test_denormalize_affine_points():
    stats = NormStats(np.array([2.0, -1.0]), np.array([3.0, 0.5]))
    s = MaskedSample(np.zeros((2, 3)), np.ones((2, 3)), stats)
    np.testing.assert_array_equal(denormalize(s, np.zeros((2, 3)))[:, 0], [2.0, -1.0])
    np.testing.assert_array_equal(denormalize(s, np.ones((2, 3)))[:, 0], [5.0, -0.5])
    rng = np.random.default_rng(0)
    v = rng.normal(size=(2, 3))
    norm = (denormalize(s, v) - stats.mean[:, None]) / stats.std[:, None]
    np.testing.assert_allclose(norm, v, atol=1e-10)
    with pytest.raises(ContractError):
        denormalize(s, np.zeros((3, 2)))


# ---------------------------------------------------------------- masks


def test_random_mask_rate_and_determinism():
    m = generate_random_mask((100, 100), 0.25, seed=5)
    assert 0.23 <= 1 - m.mean() <= 0.27
    assert np.array_equal(m, generate_random_mask((100, 100), 0.25, seed=5))
    assert generate_random_mask((50, 50), 1e-12, seed=1).all()
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ContractError):
            generate_random_mask((3, 3), bad, 0)


def ring_graph(n):
    return build_adjacency(ring_distances(n), 0.1)


def test_single_block():
    g = ring_graph(6)
    m = generate_block_mask((6, 10), 0.05, 2, 3, g, seed=0)
    missing = np.argwhere(m == 0)
    assert len(missing) == 6
    nodes = sorted(set(missing[:, 0]))
    times = sorted(set(missing[:, 1]))
    assert len(nodes) == 2 and len(times) == 3
    assert times == list(range(times[0], times[0] + 3))
    assert g.adjacency[nodes[0], nodes[1]] > 0 or {nodes[0], nodes[1]} == {0, 5}


@pytest.mark.parametrize("seed", range(5))
def test_block_rate_bound(seed):
    rng = np.random.default_rng(seed)
    pts = rng.random((81, 2))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    g = build_adjacency(d, 0.1)
    nv, nt = 3, 4
    m = generate_block_mask((81, 24), 0.25, nv, nt, g, seed)
    frac = 1 - m.mean()
    assert 0.25 <= frac <= 0.25 + nv * nt / (81 * 24)


def test_block_neighbours_match_bruteforce():
    rng = np.random.default_rng(2)
    w = rng.random((5, 5))
    a = np.triu(w, 1)
    a = a + a.T
    for seed_node in range(5):
        for nv in range(1, 6):
            chosen = block_nodes(a, seed_node, nv)
            others = [j for j in range(5) if j != seed_node]
            best = sorted(others, key=lambda j: -a[seed_node, j])[: nv - 1]
            assert chosen[0] == seed_node
            assert set(chosen[1:]) == set(best)


def test_block_mask_errors():
    g = ring_graph(4)
    with pytest.raises(ContractError):
        generate_block_mask((4, 10), 1.0, 2, 2, g, 0)
    with pytest.raises(ContractError):
        generate_block_mask((4, 10), 0.2, 5, 2, g, 0)


def test_split_counts():
    p = split_target_condition(np.ones((10, 10)), 0.1, seed=0)
    assert p.M_ta.sum() == 10 and p.M_co.sum() == 90
    assert np.array_equal(p.M_ta + p.M_co, np.ones((10, 10)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 0.99))
def test_split_invariants(seed, frac):
    rng = np.random.default_rng(seed)
    M = (rng.random((6, 12)) < 0.7).astype(float)
    M[0, 0] = 1.0
    p = split_target_condition(M, frac, seed)
    assert np.all(p.M_ta * p.M_co == 0)
    assert np.array_equal(p.M_ta + p.M_co, M)
    assert p.M_ta.sum() == math.ceil(frac * M.sum())


def test_split_errors():
    with pytest.raises(ContractError):
        split_target_condition(np.zeros((3, 3)), 0.1, 0)
    with pytest.raises(ContractError):
        split_target_condition(np.ones((3, 3)), 1.0, 0)


def test_evaluation_pair():
    M = np.array([[1, 0], [0, 1]], dtype=float)
    p = evaluation_pair(M)
    assert np.array_equal(p.M_ta, 1 - M) and np.array_equal(p.M_co, M)


def test_graphspec_validates():
    with pytest.raises(ContractError):
        GraphSpec(np.zeros((2, 3)))
