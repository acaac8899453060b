import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from llpbp.knn import (
    KernelSpec,
    build_graph,
    distance,
    kernel_eval,
    subsample_constraints,
)
from oracles import brute_knn, has_cycle


def test_distance_examples():
    assert distance([1, 0], [0, 1], "cosine") == pytest.approx(1.0)
    assert distance([0, 0], [3, 4], "euclidean") == 5.0
    assert distance([2, 0], [4, 0], "cosine") == pytest.approx(0.0, abs=1e-15)
    assert distance([1, 0], [-1, 0], "cosine") == pytest.approx(2.0)


def test_distance_errors():
    with pytest.raises(ValueError):
        distance([0, 0], [1, 0], "cosine")
    with pytest.raises(ValueError):
        distance([0, 0], [1, 0, 0])


def test_kernel_examples():
    rbf = KernelSpec("rbf", gamma=1.0)
    assert kernel_eval(rbf, 0.0) == 1.0
    assert kernel_eval(rbf, 1.0) == pytest.approx(math.exp(-1), rel=1e-12)
    assert kernel_eval(KernelSpec("matern", nu=0.5, length_scale=1.0), 2.0) == pytest.approx(math.exp(-2), rel=1e-12)


@pytest.mark.parametrize("nu", [0.5, 1.5, 2.5])
def test_matern_closed_form_matches_bessel(nu):
    from scipy.special import gamma, kv

    spec = KernelSpec("matern", nu=nu, length_scale=0.7)
    d = np.linspace(0.01, 5, 50)
    r = math.sqrt(2 * nu) * d / 0.7
    ref = (2 ** (1 - nu) / gamma(nu)) * r**nu * kv(nu, r)
    np.testing.assert_allclose(kernel_eval(spec, d), ref, rtol=1e-10)


@pytest.mark.parametrize("spec", [KernelSpec("rbf", gamma=0.5), KernelSpec("matern", nu=1.5), KernelSpec("matern", nu=2.5, length_scale=3.0)])
def test_kernel_monotone_in_unit_interval(spec):
    d = np.linspace(0, 20, 400)
    k = kernel_eval(spec, d)
    assert k[0] == 1.0
    assert np.all(np.diff(k) <= 0)
    assert np.all((k > 0) & (k <= 1))


def test_kernel_invalid():
    with pytest.raises(ValueError):
        KernelSpec("matern", nu=1.0)
    with pytest.raises(ValueError):
        kernel_eval(KernelSpec("rbf"), -1.0)


def test_line_example():
    x = np.array([[0.0], [1.0], [3.0]])
    g = build_graph(x, 1, math.inf, "euclidean")
    assert [g.neighbors(i).tolist() for i in range(3)] == [[1], [0], [1]]
    g = build_graph(x, 1, 0.5, "euclidean")
    assert g.num_edges == 0


def test_ties_go_to_lowest_index():
    x = np.array([[0.0], [1.0], [-1.0], [1.0]])
    g = build_graph(x, 1, math.inf, "euclidean")
    assert g.neighbors(0).tolist() == [1]  # 1, 2 and 3 are all at distance 1
    assert g.neighbors(1).tolist() == [3]  # duplicate at distance 0
    assert g.neighbors(3).tolist() == [1]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.integers(1, 5), st.integers(1, 6), st.sampled_from(["euclidean", "cosine"]), st.integers(0, 10**6))
def test_matches_brute_force(m, d, k, metric, seed):
    rng = np.random.default_rng(seed)
    # integer grid makes exact ties common
    x = rng.integers(-2, 3, size=(m, d)).astype(float)
    if metric == "cosine":
        x[np.linalg.norm(x, axis=1) == 0, 0] = 1.0
    delta = float(rng.choice([0.5, 1.0, 2.0, math.inf]))
    g = build_graph(x, k, delta, metric)
    ref = brute_knn(x, k, delta, lambda a, b: distance(a, b, metric))
    for i in range(m):
        assert g.neighbors(i).tolist() == [j for j, _ in ref[i]]
        np.testing.assert_allclose(g.distances[g.indptr[i] : g.indptr[i + 1]], [dd for _, dd in ref[i]], atol=1e-12)


def test_graph_invariants():
    x = np.random.default_rng(0).normal(size=(300, 4))
    g = build_graph(x, 7, 2.0, "euclidean")
    src, dst, dist = g.edges()
    assert np.all(src != dst)
    assert np.all(dist <= 2.0)
    assert np.all(np.diff(g.indptr) <= 7)


def test_block_boundaries_do_not_matter(monkeypatch):
    import llpbp.knn as knn

    x = np.random.default_rng(1).normal(size=(97, 3))
    full = build_graph(x, 3, math.inf, "cosine")
    monkeypatch.setattr(knn, "_BLOCK_CELLS", 97 * 5)
    blocked = build_graph(x, 3, math.inf, "cosine")
    np.testing.assert_array_equal(full.indices, blocked.indices)
    np.testing.assert_array_equal(full.indptr, blocked.indptr)


def test_permutation_equivariance_with_duplicates():
    rng = np.random.default_rng(5)
    base = rng.normal(size=(20, 2))
    x = np.concatenate([base, base[:6]])
    g = build_graph(x, 2, math.inf, "euclidean")
    perm = rng.permutation(len(x))
    gp = build_graph(x[perm], 2, math.inf, "euclidean")
    # neighbor *distances* are permutation invariant even where tie choices move
    for new_i, old_i in enumerate(perm):
        np.testing.assert_allclose(
            np.sort(gp.distances[gp.indptr[new_i] : gp.indptr[new_i + 1]]),
            np.sort(g.distances[g.indptr[old_i] : g.indptr[old_i + 1]]),
        )
    # sorting the permuted rows back to original order reproduces the graph
    inv = np.argsort(perm)
    gb = build_graph(x[perm][inv], 2, math.inf, "euclidean")
    np.testing.assert_array_equal(gb.indices, g.indices)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 60), st.integers(1, 6), st.integers(0, 10**6))
def test_one_nn_graph_is_a_forest(m, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 3, size=(m, d)).astype(float) if seed % 2 else rng.normal(size=(m, d))
    g = build_graph(x, 1, math.inf, "euclidean")
    assert not has_cycle(m, g.undirected_pairs().tolist())


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 60), st.integers(1, 5), st.integers(0, 10**6))
def test_directed_one_nn_paths_nonincreasing(m, d, seed):
    x = np.random.default_rng(seed).normal(size=(m, d))
    g = build_graph(x, 1, math.inf, "euclidean")
    nxt = g.indices
    dist = g.distances
    for start in range(m):
        seen, a, last = {start}, start, math.inf
        while True:
            b = nxt[a]
            if b in seen:
                break
            assert dist[a] <= last
            last = dist[a]
            seen.add(b)
            a = b


def test_subsample():
    x = np.random.default_rng(0).normal(size=(1000, 3))
    g = build_graph(x, 10, math.inf, "euclidean")
    assert subsample_constraints(g, 1.0, 0) is g
    assert subsample_constraints(g, 0.0, 0).num_edges == 0
    half = subsample_constraints(g, 0.5, 0)
    n = g.num_edges
    assert abs(half.num_edges - n / 2) <= 3 * math.sqrt(n * 0.25)
    again = subsample_constraints(g, 0.5, 0)
    np.testing.assert_array_equal(half.indices, again.indices)
    # kept entries are a subset of the original lists
    for i in range(0, 1000, 97):
        assert set(half.neighbors(i).tolist()) <= set(g.neighbors(i).tolist())
    with pytest.raises(ValueError):
        subsample_constraints(g, 1.5, 0)
