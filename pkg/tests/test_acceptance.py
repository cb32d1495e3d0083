"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records one ``PASS``/``FAIL`` line, shown in the terminal summary.
Every factorization run here goes through :class:`FloorCheck`, which asserts
the nonnegativity floor after each iteration (criterion 3).
"""
import csv
import time

import numpy as np
import pytest

from structnmf.baselines import hits, pagerank
from structnmf.cli import main
from structnmf.evaluation import RegressionDataset, compare_models, fit_poisson, fit_quasipoisson
from structnmf.factorization import FactorizationConfig, fit, fit_multi_restart
from structnmf.influence import importance
from structnmf.netstats import betweenness, build_stat_matrix, closeness, clustering_coefficient, identity_stat_matrix
from structnmf.synth import SynthSpec, exact_instance, generate

from oracles import (
    angle,
    brute_betweenness,
    brute_closeness,
    brute_clustering,
    dominant_eigvec,
    matches_rationals,
    random_digraph,
)

EPS = 1e-4


class FloorCheck:
    """Iteration callback: the smallest ``Theta``/``V_m`` entry must equal ``epsilon`` exactly."""

    def __init__(self, epsilon=EPS):
        self.epsilon = epsilon
        self.iterations = 0

    def __call__(self, it, theta, v, lambdas):
        low = min(theta.min(), *(x.min() for x in v)) if v else theta.min()
        assert low == self.epsilon, f"iteration {it}: min entry {low!r} != {self.epsilon!r}"
        self.iterations += 1


FLOOR = FloorCheck()


def record(log, number, passed, detail):
    log.append(f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}")
    return passed


# -- shared runs -----------------------------------------------------------

@pytest.fixture(scope="module")
def exact_recovery():
    A, S, *_ = exact_instance(30, 3, 3, epsilon=EPS, seed=2024)
    cfg = FactorizationConfig(rank=3, epsilon=EPS, restarts=30, seed=7)
    t0 = time.perf_counter()
    res = fit_multi_restart(A, S, cfg, callback=FLOOR)
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def convergence_runs():
    out = []
    for seed in range(20):
        net = generate(SynthSpec((25, 25), 0.2, 0.03, seed=seed)).network
        stats = [build_stat_matrix(v) for v in net.views]
        out.append(fit(net, stats, FactorizationConfig(rank=2, epsilon=EPS, max_iters=50), seed=seed,
                       callback=FLOOR))
    return out


HUBS = (5, 40)


@pytest.fixture(scope="module")
def hub_runs():
    out = []
    for seed in range(30):
        net = generate(SynthSpec((30, 30), 0.1, 0.02, hub_nodes=HUBS, hub_multiplier=5, seed=seed)).network
        stats = [build_stat_matrix(v) for v in net.views]
        res = fit_multi_restart(net, stats, FactorizationConfig(rank=2, epsilon=EPS, restarts=30, seed=seed),
                                callback=FLOOR)
        out.append((net, res))
    return out


@pytest.fixture(scope="module")
def rank_curves():
    net = generate(SynthSpec((20, 20, 20), 0.5, 0.03, seed=3)).network
    stats = [identity_stat_matrix(name, net.n) for name in net.names]
    curves = []
    for seed_set in range(10):
        curve = []
        for K in range(1, 7):
            cfg = FactorizationConfig(rank=K, epsilon=EPS, restarts=10, seed=1000 * seed_set + K)
            curve.append(fit_multi_restart(net, stats, cfg, callback=FLOOR).variance_explained)
        curves.append(curve)
    return np.array(curves)


# -- criteria --------------------------------------------------------------

def test_criterion_1_exact_recovery(exact_recovery, acceptance_log):
    res, seconds = exact_recovery
    ok = res.variance_explained >= 99.5 and seconds < 30
    record(acceptance_log, 1, ok,
           f"exact-recovery variance explained {res.variance_explained:.4f}% (>= 99.5) in {seconds:.1f}s (< 30)")
    assert ok


def test_criterion_2_convergence(convergence_runs, acceptance_log):
    n_ok = sum(r.converged and r.iterations <= 50 for r in convergence_runs)
    worst = max(r.iterations for r in convergence_runs)
    ok = n_ok >= 18
    record(acceptance_log, 2, ok, f"{n_ok}/20 planted instances converged within 50 iterations "
                                  f"(need >= 18; max iterations {worst})")
    assert ok


def test_criterion_3_floor(exact_recovery, convergence_runs, hub_runs, rank_curves, acceptance_log):
    # FloorCheck asserts inside every iteration; reaching here means no violation occurred
    ok = FLOOR.iterations > 0
    record(acceptance_log, 3, ok, f"min(Theta, V_m) == epsilon exactly after all {FLOOR.iterations} checked iterations")
    assert ok


def test_criterion_4_planted_hubs(hub_runs, acceptance_log):
    nmf_hits, pr_hits = 0, 0
    for net, res in hub_runs:
        top = set(np.argsort(-importance(res), kind="stable")[:5])
        nmf_hits += set(HUBS) <= top
        pr = pagerank(net.view("retweet")).scores
        pr_hits += set(HUBS) <= set(np.argsort(-pr, kind="stable")[:5])
    ok = nmf_hits >= 28 and pr_hits >= 28
    record(acceptance_log, 4, ok, f"both hubs in top 5 by importance in {nmf_hits}/30 seeds, "
                                  f"by PageRank in {pr_hits}/30 (need >= 28 each)")
    assert ok


def test_criterion_5_statistic_oracles(acceptance_log):
    rng = np.random.default_rng(55)
    bad = []
    worst = 0.0
    for trial in range(200):
        n = int(rng.integers(1, 7))
        p = float(rng.uniform(0.15, 0.8))
        U = random_digraph(rng, n, p=p)
        if not (matches_rationals(betweenness(U, False), brute_betweenness(U, False, exact=True))
                and matches_rationals(closeness(U, False), brute_closeness(U, False, exact=True))
                and matches_rationals(clustering_coefficient(U, False), brute_clustering(U, False, exact=True))):
            bad.append(("unweighted", trial))
        W = random_digraph(rng, n, p=p, weighted=True)
        err = max(
            np.max(np.abs(betweenness(W, True) - brute_betweenness(W, True)), initial=0),
            np.max(np.abs(closeness(W, True) - brute_closeness(W, True)), initial=0),
            np.max(np.abs(clustering_coefficient(W, True) - brute_clustering(W, True)), initial=0),
        )
        worst = max(worst, err)
        if err > 1e-10:
            bad.append(("weighted", trial))
    ok = not bad
    record(acceptance_log, 5, ok, f"200 unweighted + 200 weighted graphs (n <= 6): {len(bad)} mismatches; "
                                  f"unweighted exact to float round-off, weighted max error {worst:.1e} (<= 1e-10)")
    assert ok, bad[:5]


def test_criterion_6_hits(acceptance_log):
    rng = np.random.default_rng(66)
    angles = []
    for _ in range(50):
        n = int(rng.integers(5, 40))
        A = random_digraph(rng, n, p=float(rng.uniform(0.1, 0.5)), weighted=True)
        A[0, 1] = max(A[0, 1], 0.5)
        auth, _ = hits(A)
        angles.append(angle(auth.scores, dominant_eigvec(A.T @ A)))
    ok = max(angles) <= 1e-8
    record(acceptance_log, 6, ok, f"HITS authority vs dense eigenvector of A^T A on 50 graphs: "
                                  f"max angle {max(angles):.1e} (<= 1e-8)")
    assert ok


def test_criterion_7_rank_scan(rank_curves, acceptance_log):
    mean = rank_curves.mean(axis=0)
    monotone = bool(np.all(np.diff(mean) >= 0))
    gain23 = rank_curves[:, 2] - rank_curves[:, 1]
    after = rank_curves[:, 3:] - rank_curves[:, 2:-1]
    elbow = int(np.sum(np.all(after < 0.5 * gain23[:, None], axis=1)))
    ok = monotone and elbow >= 8
    record(acceptance_log, 7, ok, f"mean best-of-10 variance explained over K=1..6 "
                                  f"{np.array2string(mean, precision=2)} non-decreasing={monotone}; "
                                  f"elbow at K=3 in {elbow}/10 seed sets (need >= 8)")
    assert ok


def _overdispersed(rng, mu, phi):
    p = 1.0 / phi
    return rng.negative_binomial(mu * p / (1 - p), p).astype(float)


def test_criterion_8_glm(acceptance_log):
    beta = np.array([0.4, 0.7, -0.5])
    covered, est_gap = 0, 0.0
    for rep in range(100):
        rng = np.random.default_rng(8000 + rep)
        n = 400
        X = np.column_stack([np.ones(n), rng.normal(size=n), rng.binomial(1, 0.4, n)])
        y = _overdispersed(rng, np.exp(X @ beta), 3.0)
        data = RegressionDataset(y, X, ["intercept", "x", "d"], [str(i) for i in range(n)])
        q, p = fit_quasipoisson(data), fit_poisson(data)
        est_gap = max(est_gap, float(np.max(np.abs(q.coefficients - p.coefficients))))
        covered += bool(np.all(np.abs(q.coefficients - beta) <= 3 * q.standard_errors))
    rng = np.random.default_rng(88)
    y = rng.poisson(3.7, 250).astype(float)
    icpt = fit_quasipoisson(RegressionDataset(y, np.ones((250, 1)), ["intercept"], [str(i) for i in range(250)]))
    icpt_err = abs(icpt.coefficients[0] - np.log(y.mean()))
    ok = est_gap <= 1e-10 and covered >= 93 and icpt_err <= 1e-12
    record(acceptance_log, 8, ok, f"quasi vs Poisson estimates max gap {est_gap:.1e} (<= 1e-10); "
                                  f"beta within 3 scaled SEs in {covered}/100 (>= 93); "
                                  f"intercept-only error {icpt_err:.1e} (<= 1e-12)")
    assert ok


def test_criterion_9_rmse_methodology(acceptance_log):
    wins = 0
    detail = []
    for seed in range(10):
        net = generate(SynthSpec((30, 30), 0.12, 0.03, hub_nodes=(4, 33), hub_multiplier=4, seed=seed)).network
        stats = [build_stat_matrix(v) for v in net.views]
        res = fit_multi_restart(net, stats, FactorizationConfig(rank=2, epsilon=EPS, restarts=5, seed=seed),
                                callback=FLOOR)
        score = importance(res)
        z = (score - score.mean()) / score.std()
        rng = np.random.default_rng(900 + seed)
        age = rng.normal(50, 10, net.n)
        X = np.column_stack([np.ones(net.n), (age - 50) / 10])
        y = _overdispersed(rng, np.exp(1.0 + 0.2 * X[:, 1] + 0.6 * z), 3.0)
        ids = list(net.registry.ids)
        data = RegressionDataset(y, X, ["intercept", "age"], ids)
        # standardized so the coefficient stays O(1); the fitted model is the same
        rows = compare_models(data, {"true_score": dict(zip(ids, z))})
        base, with_score = rows[0]["rmse"], rows[1]["rmse"]
        wins += with_score < base
        detail.append(f"{with_score:.2f}<{base:.2f}")
    ok = wins >= 9
    record(acceptance_log, 9, ok, f"controls+true score beat controls-only RMSE in {wins}/10 seeds (need >= 9)")
    assert ok, detail


PIPELINE = """\
seed = 5
out = "{out}"
threads = {threads}
stages = ["synth", "stats", "factorize", "scree", "rank", "subgraph", "baseline", "regress"]

[synth]
sizes = [12, 12]
within_prob = 0.3
between_prob = 0.04
hub_nodes = [2, 15]
hub_multiplier = 4

[factorization]
rank = 2
restarts = 8

[scree]
ranks = [1, 2, 3]

[regress]
outcome = "{outcome}"
influence = ["@structured_semi_nmf", "@pagerank"]
"""


def test_criterion_10_determinism(tmp_path, acceptance_log):
    outcome = tmp_path / "outcome.csv"
    rng = np.random.default_rng(10)
    with open(outcome, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "count", "age"])
        for i in range(24):
            w.writerow([f"n{i:02d}", int(rng.poisson(4 + 6 * (i in (2, 15)))), int(rng.integers(25, 70))])
    dirs = []
    for run, threads in (("a", 1), ("b", 1), ("c", 4)):
        cfg = tmp_path / f"{run}.toml"
        cfg.write_text(PIPELINE.format(out=tmp_path / run, threads=threads, outcome=outcome))
        assert main(["--config", str(cfg), "run"]) == 0
        dirs.append(tmp_path / run)
    names = sorted(p.name for p in dirs[0].iterdir()
                   if p.name == "rank.csv" or p.name.startswith(("theta", "v_", "lambda_")))
    same = all((d / name).read_bytes() == (dirs[0] / name).read_bytes() for d in dirs[1:] for name in names)
    extra = all((d / "rmse.csv").read_bytes() == (dirs[0] / "rmse.csv").read_bytes() for d in dirs[1:])
    ok = same and extra and len(names) == 8
    record(acceptance_log, 10, ok, f"three full pipeline runs (1, 1 and 4 threads) byte-identical across "
                                   f"{len(names)} rank/factor CSVs and rmse.csv: {same and extra}")
    assert ok
