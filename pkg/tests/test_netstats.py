import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from structnmf.graph import NetworkView
from structnmf.netstats import (
    STATISTICS,
    betweenness,
    build_stat_matrix,
    closeness,
    clustering_coefficient,
    degree,
    identity_stat_matrix,
    scale_columns,
    standardize_columns,
)

from oracles import brute_betweenness, brute_closeness, brute_clustering, matches_rationals, random_digraph


def cycle(n):
    A = np.zeros((n, n))
    for i in range(n):
        A[i, (i + 1) % n] = 1
    return A


def star(n, bidirected=True):
    A = np.zeros((n, n))
    A[0, 1:] = 1
    if bidirected:
        A[1:, 0] = 1
    return A


# -- frozen hand-computed values -------------------------------------------

def test_directed_three_cycle_betweenness_is_one_each():
    # each node is the only intermediate on exactly one ordered pair
    np.testing.assert_array_equal(betweenness(cycle(3), weighted=False), [1.0, 1.0, 1.0])


def test_bidirected_star_centre_counts_ordered_pairs():
    # 5 leaves -> 5*4 ordered leaf pairs, all routed through the centre
    bc = betweenness(star(6), weighted=False)
    assert bc[0] == 20.0
    np.testing.assert_array_equal(bc[1:], 0.0)


def test_four_star_centre():
    bc = betweenness(star(5), weighted=False)
    assert bc[0] == 12.0


def test_diamond_splits_credit():
    # 0 -> {1, 2} -> 3: two geodesics share the pair (0, 3)
    A = np.zeros((4, 4))
    A[0, 1] = A[0, 2] = A[1, 3] = A[2, 3] = 1
    np.testing.assert_array_equal(betweenness(A, weighted=False), [0.0, 0.5, 0.5, 0.0])


def test_weighted_distance_is_inverse_weight():
    # strong indirect link 0->1->2 (length 0.2) beats weak direct 0->2 (length 1)
    A = np.zeros((3, 3))
    A[0, 1] = A[1, 2] = 10.0
    A[0, 2] = 1.0
    np.testing.assert_array_equal(betweenness(A, weighted=True), [0.0, 1.0, 0.0])
    np.testing.assert_array_equal(betweenness(A, weighted=False), [0.0, 0.0, 0.0])


def test_harmonic_closeness_on_path():
    A = np.zeros((3, 3))
    A[0, 1] = A[1, 2] = 1
    np.testing.assert_allclose(closeness(A, weighted=False), [(1 + 0.5) / 2, 0.5, 0.0])


def test_closeness_unreachable_contributes_zero():
    c = closeness(np.zeros((4, 4)), weighted=False)
    np.testing.assert_array_equal(c, 0.0)


def test_clustering_triangle_and_star():
    tri = np.ones((3, 3)) - np.eye(3)
    np.testing.assert_array_equal(clustering_coefficient(tri, weighted=False), [1.0, 1.0, 1.0])
    np.testing.assert_array_equal(clustering_coefficient(star(5), weighted=False), 0.0)


def test_barrat_hand_value():
    # node 0 links 1 (w=2) and 2 (w=4); 1-2 linked; 0-3 dangling (w=1)
    A = np.zeros((4, 4))
    A[0, 1], A[0, 2], A[1, 2], A[0, 3] = 2.0, 4.0, 1.0, 1.0
    c = clustering_coefficient(A, weighted=True)
    # s=7, k=3: pairs (1,2),(2,1) contribute (2+4)/2 each
    assert c[0] == pytest.approx(6.0 / (7 * 2), abs=1e-15)


def test_degree_binary_counts_distinct_neighbours():
    A = np.zeros((3, 3))
    A[0, 1] = A[1, 0] = A[0, 2] = 1
    np.testing.assert_array_equal(degree(A, weighted=False), [2, 1, 1])
    np.testing.assert_array_equal(degree(A, weighted=True), [3, 2, 1])


# -- brute-force oracles over random graphs -------------------------------

@pytest.mark.parametrize("weighted", [False, True])
def test_matches_path_enumeration(weighted):
    rng = np.random.default_rng(12)
    for _ in range(60):
        n = int(rng.integers(2, 7))
        A = random_digraph(rng, n, p=float(rng.uniform(0.2, 0.7)), weighted=weighted)
        if weighted:
            np.testing.assert_allclose(betweenness(A, True), brute_betweenness(A, True), rtol=0, atol=1e-10)
            np.testing.assert_allclose(closeness(A, True), brute_closeness(A, True), rtol=0, atol=1e-10)
            np.testing.assert_allclose(clustering_coefficient(A, True), brute_clustering(A, True), rtol=0, atol=1e-10)
        else:
            # the true values are rationals; allow only float round-off of the sums
            assert matches_rationals(betweenness(A, False), brute_betweenness(A, False, exact=True))
            assert matches_rationals(closeness(A, False), brute_closeness(A, False, exact=True))
            assert matches_rationals(clustering_coefficient(A, False), brute_clustering(A, False, exact=True))


def test_networkx_cross_check():
    rng = np.random.default_rng(3)
    for _ in range(15):
        A = random_digraph(rng, 12, p=0.25, weighted=True)
        G = nx.from_numpy_array(A, create_using=nx.DiGraph)
        for u, v, d in G.edges(data=True):
            d["dist"] = 1.0 / d["weight"]
        nxb = nx.betweenness_centrality(G, weight="dist", normalized=False)
        np.testing.assert_allclose(betweenness(A, True), [nxb[i] for i in range(12)], atol=1e-9)
        nxb_u = nx.betweenness_centrality(G, normalized=False)
        np.testing.assert_allclose(betweenness(A, False), [nxb_u[i] for i in range(12)], atol=1e-9)
        # networkx harmonic centrality uses incoming distances; reverse to get outgoing
        h = nx.harmonic_centrality(G.reverse(), distance="dist")
        np.testing.assert_allclose(closeness(A, True), [h[i] / 11 for i in range(12)], atol=1e-12)


def test_threads_do_not_change_results():
    rng = np.random.default_rng(7)
    A = random_digraph(rng, 40, p=0.1, weighted=True)
    np.testing.assert_array_equal(betweenness(A, threads=1), betweenness(A, threads=4))
    np.testing.assert_array_equal(closeness(A, threads=1), closeness(A, threads=3))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2**31 - 1))
def test_relabeling_permutes_statistics(n, seed):
    rng = np.random.default_rng(seed)
    A = random_digraph(rng, n, p=0.35, weighted=True)
    perm = rng.permutation(n)
    B = A[np.ix_(perm, perm)]
    for fn in (betweenness, closeness, clustering_coefficient, degree):
        np.testing.assert_allclose(fn(B), fn(A)[perm], atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2**31 - 1))
def test_ranges(n, seed):
    rng = np.random.default_rng(seed)
    A = random_digraph(rng, n, p=0.4, weighted=bool(seed % 2))
    c = clustering_coefficient(A)
    assert np.all((c >= 0) & (c <= 1 + 1e-12))
    assert np.all(betweenness(A) <= (n - 1) * (n - 2) + 1e-9)
    assert np.all(betweenness(A) >= 0)


# -- stat matrix -----------------------------------------------------------

def test_build_stat_matrix_columns_and_scaling():
    rng = np.random.default_rng(0)
    A = random_digraph(rng, 15, p=0.3)
    view = NetworkView("binary", A, kind="binary")
    raw = build_stat_matrix(view, scaling="none")
    assert raw.columns == STATISTICS
    np.testing.assert_array_equal(raw.column("betweenness"), betweenness(A, weighted=False))
    z = build_stat_matrix(view, scaling="zscore")
    assert z.standardized
    np.testing.assert_allclose(z.S.mean(axis=0), 0, atol=1e-12)
    u = build_stat_matrix(view, scaling="unit")
    np.testing.assert_allclose(u.S.std(axis=0), 1, atol=1e-12)
    np.testing.assert_allclose(u.S * raw.S.std(axis=0), raw.S, atol=1e-12)


def test_constant_columns_survive_scaling():
    S = np.column_stack([np.ones(5), np.arange(5.0)])
    np.testing.assert_array_equal(standardize_columns(S)[:, 0], 0)
    np.testing.assert_array_equal(scale_columns(S)[:, 0], 1)


def test_build_stat_matrix_rejects_unknown():
    view = NetworkView("v", np.zeros((3, 3)))
    with pytest.raises(ValueError, match="unknown"):
        build_stat_matrix(view, statistics=("pagerank",))
    with pytest.raises(ValueError):
        build_stat_matrix(view, scaling="minmax")


def test_identity_stat_matrix():
    s = identity_stat_matrix("v", 4)
    np.testing.assert_array_equal(s.S, np.eye(4))
