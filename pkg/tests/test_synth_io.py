import csv

import numpy as np
import pytest

from structnmf.factorization import FactorizationConfig, fit_multi_restart
from structnmf.graph import load_edge_list, NodeRegistry
from structnmf.io import load_result, read_matrix, read_scores, save_result, write_matrix
from structnmf.synth import SynthSpec, ViewSpec, exact_instance, generate, node_ids, write_synth


def test_generate_is_seeded():
    spec = SynthSpec((8, 8), 0.5, 0.1, hub_nodes=(2,), hub_multiplier=3, seed=4)
    a, b = generate(spec), generate(spec)
    for va, vb in zip(a.network.views, b.network.views):
        np.testing.assert_array_equal(va.adjacency, vb.adjacency)
    c = generate(SynthSpec((8, 8), 0.5, 0.1, seed=5))
    assert not np.array_equal(a.network.views[0].adjacency, c.network.views[0].adjacency)


def test_generate_shapes_and_kinds():
    net = generate(SynthSpec((5, 7), 0.6, 0.0, seed=0))
    assert net.network.n == 12
    assert net.network.names == ["retweet", "mentions", "follows"]
    follows = net.network.view("follows").adjacency
    assert set(np.unique(follows)) <= {0.0, 1.0}
    # no between-community edges at between_prob 0
    assert not follows[:5, 5:].any() and not follows[5:, :5].any()
    np.testing.assert_array_equal(net.labels, [0] * 5 + [1] * 7)
    rt = net.network.view("retweet").adjacency
    np.testing.assert_allclose(rt, np.log1p(net.counts["retweet"]))


def test_hub_multiplier_raises_in_degree():
    spec = SynthSpec((30, 30), 0.1, 0.02, hub_nodes=(5,), hub_multiplier=8, seed=1)
    A = generate(spec).network.view("follows").adjacency
    indeg = A.sum(axis=0)
    assert indeg[5] == indeg.max()


@pytest.mark.parametrize("kwargs", [
    dict(sizes=(), within_prob=0.1, between_prob=0.1),
    dict(sizes=(3,), within_prob=1.5, between_prob=0.1),
    dict(sizes=(3,), within_prob=0.5, between_prob=0.1, hub_nodes=(3,)),
    dict(sizes=(3,), within_prob=0.5, between_prob=0.1, views=(ViewSpec("x", geometric_p=0),)),
])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        SynthSpec(**kwargs)


def test_write_synth_round_trip(tmp_path):
    net = generate(SynthSpec((4, 4), 0.7, 0.2, hub_nodes=(1,), seed=3))
    paths = write_synth(net, tmp_path)
    reg = NodeRegistry(node_ids(8))
    view, _ = load_edge_list(paths["retweet"], "retweet", "weighted", "log1p", registry=reg)
    np.testing.assert_allclose(view.adjacency, net.network.view("retweet").adjacency)
    with open(paths["ground_truth"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["hub"] for r in rows].count("1") == 1
    assert rows[1] == {"node": "n1", "community": "0", "hub": "1"}


def test_exact_instance_reconstructs():
    A, S, theta, V, L = exact_instance(6, 2, 2, seed=0)
    np.testing.assert_allclose(A[1], S[1] @ L[1] @ (theta + V[1]).T)
    assert min(theta.min(), V[0].min()) >= 1e-4


def test_matrix_csv_round_trip_is_exact(tmp_path):
    M = np.random.default_rng(0).normal(size=(4, 3)) * 1e-7
    write_matrix(tmp_path / "m.csv", M, ["a", "b", "c", "d"])
    ids, back = read_matrix(tmp_path / "m.csv")
    assert ids == ["a", "b", "c", "d"]
    np.testing.assert_array_equal(back, M)


def test_save_and_load_result(tmp_path):
    A, S, *_ = exact_instance(8, 2, 2, seed=1)
    res = fit_multi_restart(A, S, FactorizationConfig(rank=2, restarts=2, max_iters=10))
    ids = [f"x{i}" for i in range(8)]
    written = save_result(res, ids, ["a", "b", "c", "d"], tmp_path)
    assert set(written) == {"theta.csv", "v_view0.csv", "v_view1.csv", "lambda_view0.csv",
                            "lambda_view1.csv", "factorization.json"}
    ids2, back = load_result(tmp_path)
    assert ids2 == ids
    np.testing.assert_array_equal(back.theta, res.theta)
    np.testing.assert_array_equal(back.v[1], res.v[1])
    assert back.restart_index == res.restart_index


def test_read_scores_column_choice(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("node,rank,importance\na,1,2.5\nb,2,1.0\n")
    assert read_scores(p) == {"a": 2.5, "b": 1.0}
    assert read_scores(p, "rank") == {"a": 1.0, "b": 2.0}
    with pytest.raises(ValueError):
        read_scores(p, "nope")
