import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fade.errors import ConfigError, InvalidGraphError
from fade.graphs import (Dag, FeatureGrid, FeatureNorm, build_grid, canonical_code, canonicalize,
                         complete_dag, default_grid, degrees, eccentricities, embed, enumerate_dags,
                         interval, raw_features)


@pytest.fixture(scope="module")
def grid():
    return default_grid(5, 8)


# --- independent oracles -------------------------------------------------------


def _perm_invariant_code(adj: np.ndarray) -> bytes:
    """Smallest row-major adjacency byte string over all n! relabelings."""
    n = len(adj)
    return min(adj[np.ix_(p, p)].tobytes() for p in itertools.permutations(range(n)))


def _is_acyclic(adj: np.ndarray) -> bool:
    m = np.eye(len(adj), dtype=np.int64)
    for _ in range(len(adj)):
        m = m @ adj
        if np.trace(m):
            return False
    return True


def _oracle_class_count(n: int, all_orientations: bool) -> int:
    """Isomorphism classes of DAGs on n vertices by brute force.

    With ``all_orientations`` every labeled digraph is tried and cycles are
    filtered; otherwise only upper-triangular edge sets are enumerated.
    """
    pairs = [(u, v) for u in range(n) for v in range(n) if u != v] if all_orientations \
        else list(itertools.combinations(range(n), 2))
    classes = set()
    for mask in range(1 << len(pairs)):
        adj = np.zeros((n, n), dtype=np.int64)
        for b, (u, v) in enumerate(pairs):
            if mask >> b & 1:
                adj[u, v] = 1
        if all_orientations and not _is_acyclic(adj):
            continue
        classes.add(_perm_invariant_code(adj.astype(np.uint8)))
    return len(classes)


def _bfs_ecc(n, edges):
    """Eccentricities via Floyd-Warshall on the undirected closure, per component."""
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0)
    for u, v in edges:
        d[u, v] = d[v, u] = 1
    for k in range(n):
        d = np.minimum(d, d[:, [k]] + d[[k], :])
    return [int(np.max(row[np.isfinite(row)])) for row in d]


# --- enumeration ---------------------------------------------------------------


def test_enumeration_counts_match_brute_force_oracle():
    counts = Counter(g.vertex_count for g in enumerate_dags(5))
    assert [counts[n] for n in range(1, 6)] == [1, 2, 6, 31, 302]
    for n in range(1, 4):
        assert counts[n] == _oracle_class_count(n, all_orientations=True)
    assert counts[4] == _oracle_class_count(4, all_orientations=True)
    assert counts[5] == _oracle_class_count(5, all_orientations=False)


def test_enumeration_small_bounds():
    assert enumerate_dags(1) == [Dag.from_edges(1, [])]
    assert len(enumerate_dags(2)) == 3


@pytest.mark.parametrize("bound", [0, 7, -1])
def test_enumeration_bound_out_of_range(bound):
    with pytest.raises(ConfigError):
        enumerate_dags(bound)


def test_enumeration_no_duplicates_and_canonical():
    dags = enumerate_dags(5)
    assert len(set(dags)) == len(dags) == 342
    assert len({(g.vertex_count, canonical_code(g)) for g in dags}) == 342
    for g in dags:
        assert canonicalize(g) == g
        assert g.is_topologically_labeled()
        assert g.vertex_count < 6


# --- canonical form ------------------------------------------------------------


def test_two_labelings_of_chain_agree():
    assert canonicalize(Dag.from_edges(2, [(0, 1)])) == canonicalize(Dag.from_edges(2, [(1, 0)]))


def test_fork_and_chain_differ():
    fork = Dag.from_edges(3, [(0, 1), (0, 2)])
    chain = Dag.from_edges(3, [(0, 1), (1, 2)])
    assert canonicalize(fork) != canonicalize(chain)


def test_cycle_rejected():
    with pytest.raises(InvalidGraphError):
        canonicalize(Dag.from_edges(3, [(0, 1), (1, 2), (2, 0)]))


@st.composite
def random_dags(draw, max_n=5):
    n = draw(st.integers(1, max_n))
    pairs = list(itertools.combinations(range(n), 2))
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    perm = draw(st.permutations(range(n)))
    return Dag.from_edges(n, [(perm[u], perm[v]) for u, v in chosen])


@settings(max_examples=60, deadline=None)
@given(random_dags(), st.randoms())
def test_canonical_form_is_relabeling_invariant(g, rnd):
    perm = list(range(g.vertex_count))
    rnd.shuffle(perm)
    h = Dag.from_edges(g.vertex_count, [(perm[u], perm[v]) for u, v in g.edges])
    c = canonicalize(g)
    assert canonicalize(h) == c
    assert canonicalize(c) == c
    # isomorphic to the input: same permutation-invariant code
    def adj(d):
        a = np.zeros((d.vertex_count,) * 2, dtype=np.uint8)
        for u, v in d.edges:
            a[u, v] = 1
        return a
    assert _perm_invariant_code(adj(c)) == _perm_invariant_code(adj(g))


def test_key_round_trip():
    for g in enumerate_dags(4):
        assert Dag.from_key(g.key) == g
    with pytest.raises(InvalidGraphError):
        Dag.from_key("3:0x")


# --- features ------------------------------------------------------------------


def test_single_vertex_features(grid):
    g = Dag.from_edges(1, [])
    np.testing.assert_array_equal(raw_features(g), [0.0, 0.0, 1.0])
    assert embed(g, grid.norm).n_vertices == 0.0


def test_two_chain_degree_variance():
    assert raw_features(Dag.from_edges(2, [(0, 1)]))[1] == 0.0


def test_four_chain_eccentricity():
    chain = Dag.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    assert eccentricities(chain) == _bfs_ecc(4, chain.edges) == [3, 2, 2, 3]
    assert raw_features(chain)[0] == pytest.approx(0.25)


def test_features_match_oracles_on_all_graphs():
    for g in enumerate_dags(5):
        assert eccentricities(g) == _bfs_ecc(g.vertex_count, g.edges)
        adj = np.zeros((g.vertex_count,) * 2)
        for u, v in g.edges:
            adj[u, v] = 1
        np.testing.assert_array_equal(degrees(g), adj.sum(0) + adj.sum(1))


def test_norm_constants(grid):
    np.testing.assert_allclose(grid.norm.minimum, [0.0, 0.0, 1.0])
    np.testing.assert_allclose(grid.norm.maximum, [1.2, 1.44, 5.0])


def test_embedding_in_unit_cube_and_deterministic(grid):
    for g in grid.dags:
        p = grid.embed(g)
        assert len(p) == 3
        assert all(0.0 <= v <= 1.0 for v in p)
        assert grid.embed(g) == p


def test_norm_degenerate_range():
    norm = FeatureNorm((0.0, 0.0, 1.0), (0.0, 1.0, 1.0))
    np.testing.assert_array_equal(norm.apply(np.array([0.0, 0.5, 1.0])), [0.0, 0.5, 0.0])


# --- grid and generator --------------------------------------------------------


def test_grid_partition(grid):
    assert sum(len(v) for v in grid.buckets.values()) == 342
    assert len(grid.buckets) == 25
    seen = [g for v in grid.buckets.values() for g in v]
    assert len(set(seen)) == 342
    for key, members in grid.buckets.items():
        assert members
        for g in members:
            assert interval(grid.embed(g), 8) == key


def test_single_bin_grid():
    g = build_grid(enumerate_dags(4), 1)
    assert list(g.buckets) == [(0, 0, 0)]


def test_bad_bins():
    with pytest.raises(ConfigError):
        build_grid(enumerate_dags(3), 0)


def test_empty_grid_rejected():
    empty = FeatureGrid(8, FeatureNorm((0, 0, 1), (1, 1, 5)), {})
    with pytest.raises(ConfigError):
        empty.generate([0.5, 0.5, 0.5], np.random.default_rng(0))


def test_interval_edges():
    assert interval([0.0, 0.5, 1.0], 8) == (0, 4, 7)
    assert interval([-0.3, 1.7, 0.999], 8) == (0, 7, 7)


def test_singleton_bucket(grid):
    key, members = next((k, v) for k, v in sorted(grid.buckets.items()) if len(v) == 1)
    point = (np.array(key) + 0.5) / 8
    rng = np.random.default_rng(0)
    assert all(grid.generate(point, rng) == members[0] for _ in range(20))


def test_two_graph_bucket_uniform(grid):
    key = next(k for k, v in sorted(grid.buckets.items()) if len(v) == 2)
    point = (np.array(key) + 0.5) / 8
    rng = np.random.default_rng(1)
    draws = Counter(grid.generate(point, rng) for _ in range(10_000))
    for g in grid.buckets[key]:
        assert draws[g] / 10_000 == pytest.approx(0.5, abs=0.02)


def test_fallback_nearest_bucket(grid):
    keys = np.array(sorted(grid.buckets))
    rng = np.random.default_rng(2)
    for idx in itertools.product(range(8), repeat=3):
        if idx in grid.buckets:
            continue
        point = (np.array(idx) + 0.5) / 8
        # brute force over bucket centres, ties to the smallest index
        d = [float(np.linalg.norm((k + 0.5) / 8 - point)) for k in keys]
        best = min(range(len(keys)), key=lambda i: (round(d[i], 12), tuple(keys[i])))
        assert grid.bucket_for(point) == tuple(keys[best])
        assert grid.generate(point, rng) in grid.buckets[tuple(keys[best])]


def test_generator_support_covers_space(grid):
    rng = np.random.default_rng(3)
    seen = set()
    for key, members in grid.buckets.items():
        point = (np.array(key) + 0.5) / 8
        for _ in range(40 * len(members)):
            seen.add(grid.generate(point, rng))
    assert seen == set(grid.dags)


def test_round_trip_through_generator(grid):
    rng = np.random.default_rng(4)
    for g in grid.dags:
        h = grid.generate(grid.embed(g), rng)
        assert grid.interval(grid.embed(h)) == grid.interval(grid.embed(g))


def test_grid_json_round_trip(grid, tmp_path):
    path = tmp_path / "grid.json"
    grid.save(path)
    loaded = FeatureGrid.load(path)
    assert loaded.buckets == grid.buckets
    assert loaded.norm == grid.norm
    assert loaded.bins_per_dim == 8


def test_complete_dag():
    g = complete_dag(5)
    assert len(g.edges) == 10
    assert g.sources() == [0] and g.sinks() == [4]
