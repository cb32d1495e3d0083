"""Structured Semi-NMF fitted by alternating least squares.

Multiview model::

    min  sum_m || A_m - S_m Lambda_m (Theta + V_m)^T ||_F^2
         Theta >= 0, V_m >= 0, Lambda_m unconstrained

``S_m`` (n x D) is a fixed matrix of node statistics, ``Lambda_m`` is D x K
and ``Theta``/``V_m`` are n x K. The single-view model drops ``V``.

Each sweep updates ``Theta``, then every ``V_m``, then every ``Lambda_m``.
The nonnegative factors are solved without constraints and any entry below
``epsilon`` is raised to ``epsilon``. Only ``Lambda_m`` is initialized.
"""
from __future__ import annotations

import itertools
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .graph import MultiviewNetwork
from .netstats import StatMatrix

logger = logging.getLogger(__name__)

__all__ = [
    "FactorizationConfig",
    "FactorizationResult",
    "FitError",
    "DegenerateSystemWarning",
    "objective",
    "update_theta",
    "update_v",
    "update_lambda",
    "variance_explained",
    "fit",
    "fit_single_view",
    "fit_multi_restart",
    "derive_seeds",
    "rank_scan",
]

UPDATE_RULES = ("exact", "printed")

# Condition number above which a Gram matrix is treated as singular.
_COND_LIMIT = 1e12


class FitError(RuntimeError):
    """A fit produced a non-finite objective, or every restart failed."""


class DegenerateSystemWarning(RuntimeWarning):
    """A normal-equation matrix was singular; a pseudoinverse was used."""


@dataclass(frozen=True)
class FactorizationConfig:
    """Solver settings.

    ``update_rule="exact"`` solves each block's unconstrained least squares
    given the other blocks (the Theta step accounts for the current ``V_m``,
    the V step for the current ``Theta``). ``"printed"`` uses the simpler
    closed forms ``Theta = sum_m A_m^T P_m G_m^-1`` and
    ``V_m = A_m^T P_m G_m^-1`` with ``P_m = S_m Lambda_m``,
    ``G_m = P_m^T P_m``; these coincide with the exact rule only when every
    ``V_m`` is zero and there is a single view.
    """

    rank: int
    epsilon: float = 1e-4
    tol: float | None = None
    max_iters: int = 200
    restarts: int = 30
    seed: int = 0
    init_mean: float = 1.0
    init_sd: float = 1.0
    update_rule: str = "exact"
    pool_shared: bool = True

    def __post_init__(self):
        if int(self.rank) != self.rank or self.rank < 1:
            raise ValueError(f"rank must be a positive integer, got {self.rank}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.tol is not None and not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.update_rule not in UPDATE_RULES:
            raise ValueError(f"update_rule must be one of {UPDATE_RULES}")

    @property
    def convergence_tol(self) -> float:
        return self.epsilon if self.tol is None else self.tol

    def replace(self, **changes) -> "FactorizationConfig":
        d = asdict(self)
        d.update(changes)
        return FactorizationConfig(**d)


@dataclass
class FactorizationResult:
    theta: np.ndarray
    v: list[np.ndarray] | None
    lambdas: list[np.ndarray]
    objective_trace: list[float]
    variance_explained: float
    per_view_variance_explained: list[float]
    converged: bool
    iterations: int
    config: FactorizationConfig
    seed: int | None = None
    degenerate: bool = False
    view_names: list[str] = field(default_factory=list)
    restart_index: int = 0
    restart_scores: list[float] = field(default_factory=list)

    @property
    def rank(self) -> int:
        return self.theta.shape[1]

    def reconstruction(self, stats: Sequence) -> list[np.ndarray]:
        S = _stat_arrays(stats)
        return [S[m] @ self.lambdas[m] @ self._incoming(m).T for m in range(len(S))]

    def _incoming(self, m: int) -> np.ndarray:
        return self.theta if self.v is None else self.theta + self.v[m]

    def view_scores(self, m: int) -> np.ndarray:
        """Row sums of ``Theta + V_m`` (``Theta`` alone for single-view fits)."""
        return self._incoming(m).sum(axis=1)


# -- input coercion ---------------------------------------------------------

def _adjacency_arrays(mv) -> list[np.ndarray]:
    if isinstance(mv, MultiviewNetwork):
        return mv.adjacencies()
    if isinstance(mv, np.ndarray) and mv.ndim == 2:
        return [mv]
    return [np.asarray(a, dtype=float) for a in mv]


def _stat_arrays(stats) -> list[np.ndarray]:
    if isinstance(stats, StatMatrix):
        return [stats.S]
    if isinstance(stats, np.ndarray) and stats.ndim == 2:
        return [stats]
    return [s.S if isinstance(s, StatMatrix) else np.asarray(s, dtype=float) for s in stats]


def _view_names(mv, M: int) -> list[str]:
    if isinstance(mv, MultiviewNetwork):
        return mv.names
    return [f"view{m}" for m in range(M)]


def _check_dims(A, S, lambdas=None, theta=None, v=None, names=None):
    names = names or [f"view{m}" for m in range(len(A))]
    if len(A) != len(S):
        raise ValueError(f"{len(A)} views but {len(S)} statistic matrices")
    n = A[0].shape[0]
    for m, (a, s) in enumerate(zip(A, S)):
        if a.shape != (n, n):
            raise ValueError(f"view {names[m]!r}: adjacency shape {a.shape}, expected {(n, n)}")
        if s.ndim != 2 or s.shape[0] != n:
            raise ValueError(f"view {names[m]!r}: S has shape {s.shape}, expected ({n}, D)")
        if lambdas is not None:
            if lambdas[m].shape[0] != s.shape[1]:
                raise ValueError(
                    f"view {names[m]!r}: Lambda has {lambdas[m].shape[0]} rows but S has {s.shape[1]} columns"
                )
            if theta is not None and lambdas[m].shape[1] != theta.shape[1]:
                raise ValueError(f"view {names[m]!r}: Lambda rank {lambdas[m].shape[1]} != Theta rank {theta.shape[1]}")
        if v is not None and theta is not None and v[m].shape != theta.shape:
            raise ValueError(f"view {names[m]!r}: V shape {v[m].shape} != Theta shape {theta.shape}")
    if theta is not None and theta.shape[0] != n:
        raise ValueError(f"Theta has {theta.shape[0]} rows, expected {n}")


# -- linear algebra ---------------------------------------------------------

def _right_solve(X: np.ndarray, G: np.ndarray) -> tuple[np.ndarray, bool]:
    """``X @ inv(G)`` for symmetric PSD ``G``; pseudoinverse if singular."""
    if np.linalg.cond(G) < _COND_LIMIT:
        return np.linalg.solve(G, X.T).T, False
    return X @ np.linalg.pinv(G, hermitian=True), True


def _left_solve(G: np.ndarray, X: np.ndarray) -> tuple[np.ndarray, bool]:
    """``inv(G) @ X`` for symmetric PSD ``G``; pseudoinverse if singular."""
    if np.linalg.cond(G) < _COND_LIMIT:
        return np.linalg.solve(G, X), False
    return np.linalg.pinv(G, hermitian=True) @ X, True


def _theta_raw(A, S, lambdas, v, rule):
    degenerate = False
    P = [s @ lam for s, lam in zip(S, lambdas)]
    if rule == "printed":
        total = 0.0
        for a, p in zip(A, P):
            part, bad = _right_solve(a.T @ p, p.T @ p)
            total = total + part
            degenerate |= bad
        return total, degenerate
    rhs = 0.0
    G = 0.0
    for m, (a, p) in enumerate(zip(A, P)):
        g = p.T @ p
        rhs = rhs + a.T @ p
        if v is not None:
            rhs = rhs - v[m] @ g
        G = G + g
    sol, degenerate = _right_solve(rhs, G)
    return sol, degenerate


def _v_raw(a, s, lam, theta, rule):
    p = s @ lam
    sol, degenerate = _right_solve(a.T @ p, p.T @ p)
    if rule == "exact" and theta is not None:
        sol = sol - theta
    return sol, degenerate


def pool_shared_mass(theta: np.ndarray, v: list[np.ndarray], epsilon: float) -> None:
    """Move the part of every ``V_m`` common to all views into ``Theta``, in place.

    ``Theta + V_m`` is unchanged for every view, so the fit is too; afterwards
    each entry position has ``V_m == epsilon`` in at least one view.
    """
    vmin = np.min(v, axis=0)
    shared = np.maximum(vmin - epsilon, 0.0)
    theta += shared
    for vm in v:
        at_min = vm == vmin
        vm -= shared
        # exact floor where this view held the minimum; subtraction rounds
        vm[at_min] = epsilon
        np.maximum(vm, epsilon, out=vm)


def _lambda_step(a, s, w):
    left, bad1 = _left_solve(s.T @ s, s.T @ a @ w)
    lam, bad2 = _right_solve(left, w.T @ w)
    return lam, bad1 or bad2


def _warn_degenerate(flag: bool, what: str):
    if flag:
        warnings.warn(f"singular normal equations in {what}; used pseudoinverse", DegenerateSystemWarning, stacklevel=3)


# -- public operations ------------------------------------------------------

def objective(mv, stats, lambdas, theta, v=None) -> float:
    """``sum_m ||A_m - S_m Lambda_m (Theta + V_m)^T||_F^2``."""
    A, S = _adjacency_arrays(mv), _stat_arrays(stats)
    lambdas = [np.asarray(l, dtype=float) for l in lambdas]
    theta = np.asarray(theta, dtype=float)
    _check_dims(A, S, lambdas, theta, v, _view_names(mv, len(A)))
    total = 0.0
    for m in range(len(A)):
        w = theta if v is None else theta + v[m]
        r = A[m] - S[m] @ lambdas[m] @ w.T
        total += float(np.vdot(r, r))
    return total


def update_theta(mv, stats, lambdas, epsilon: float, v=None, rule: str = "exact") -> np.ndarray:
    """New ``Theta`` given ``Lambda_m`` (and ``V_m`` when supplied), floored at ``epsilon``.

    With ``v=None`` the current view factors are taken as zero.
    """
    A, S = _adjacency_arrays(mv), _stat_arrays(stats)
    _check_dims(A, S, lambdas, names=_view_names(mv, len(A)))
    raw, bad = _theta_raw(A, S, lambdas, v, rule)
    _warn_degenerate(bad, "Theta update")
    return np.maximum(raw, epsilon)


def update_v(a, s, lam, epsilon: float, theta=None, rule: str = "exact") -> np.ndarray:
    """New ``V_m`` for one view, floored at ``epsilon``.

    Under the exact rule the current ``theta`` is subtracted from the view's
    least-squares solution; with ``theta=None`` nothing is subtracted.
    """
    a = np.asarray(a, dtype=float)
    s = s.S if isinstance(s, StatMatrix) else np.asarray(s, dtype=float)
    raw, bad = _v_raw(a, s, np.asarray(lam, dtype=float), theta, rule)
    _warn_degenerate(bad, "V update")
    return np.maximum(raw, epsilon)


def update_lambda(a, s, theta, v=None) -> np.ndarray:
    """Two-sided least squares ``(S^T S)^-1 S^T A W (W^T W)^-1`` with ``W = Theta + V``."""
    a = np.asarray(a, dtype=float)
    s = s.S if isinstance(s, StatMatrix) else np.asarray(s, dtype=float)
    w = np.asarray(theta, dtype=float) if v is None else theta + v
    lam, bad = _lambda_step(a, s, w)
    _warn_degenerate(bad, "Lambda update")
    return lam


def variance_explained(A: Sequence[np.ndarray], A_hat: Sequence[np.ndarray]) -> tuple[float, list[float]]:
    """Pooled and per-view percentage of variance explained.

    Pooled value is ``100 * (1 - sum_m rss_m / sum_m tss_m)`` where ``tss_m``
    is measured about the mean entry of ``A_m``. Views with zero total sum of
    squares report ``nan`` individually.
    """
    rss, tss, per_view = [], [], []
    for a, ah in zip(A, A_hat):
        r = float(np.sum((a - ah) ** 2))
        t = float(np.sum((a - a.mean()) ** 2))
        rss.append(r)
        tss.append(t)
        per_view.append(100.0 * (1.0 - r / t) if t > 0 else float("nan"))
    total = sum(tss)
    pooled = 100.0 * (1.0 - sum(rss) / total) if total > 0 else float("nan")
    return pooled, per_view


def _rank_guard(n: int, S: list[np.ndarray], K: int):
    D = sum(s.shape[1] for s in S)
    if K > n or K > D:
        warnings.warn(f"rank {K} exceeds n={n} or total statistic count {D}; extra components are unidentified",
                      stacklevel=3)


def _fit(A, S, config: FactorizationConfig, seed, view_factors: bool, names,
         callback: Callable | None = None) -> FactorizationResult:
    n, M, K = A[0].shape[0], len(A), config.rank
    eps, tol, rule = config.epsilon, config.convergence_tol, config.update_rule
    rng = np.random.default_rng(seed)
    lambdas = [rng.normal(config.init_mean, config.init_sd, size=(s.shape[1], K)) for s in S]
    v = [np.zeros((n, K)) for _ in range(M)] if view_factors else None
    theta = np.zeros((n, K))
    trace: list[float] = []
    degenerate = False
    converged = False
    iters = 0
    for it in range(1, config.max_iters + 1):
        iters = it
        raw, bad = _theta_raw(A, S, lambdas, v, rule)
        degenerate |= bad
        theta = np.maximum(raw, eps)
        if view_factors:
            for m in range(M):
                raw, bad = _v_raw(A[m], S[m], lambdas[m], theta, rule)
                degenerate |= bad
                v[m] = np.maximum(raw, eps)
            if config.pool_shared:
                pool_shared_mass(theta, v, eps)
        for m in range(M):
            w = theta if v is None else theta + v[m]
            lambdas[m], bad = _lambda_step(A[m], S[m], w)
            degenerate |= bad
        obj = 0.0
        for m in range(M):
            w = theta if v is None else theta + v[m]
            r = A[m] - S[m] @ lambdas[m] @ w.T
            obj += float(np.vdot(r, r))
        if not np.isfinite(obj):
            raise FitError(f"objective became non-finite at iteration {it}")
        trace.append(obj)
        if callback is not None:
            callback(it, theta, v, lambdas)
        if it > 1:
            prev = trace[-2]
            change = abs(obj - prev) / prev if prev > 0 else (0.0 if obj == prev else np.inf)
            if change <= tol:
                converged = True
                break
    if degenerate:
        logger.info("fit used pseudoinverse for singular normal equations")
    A_hat = [S[m] @ lambdas[m] @ (theta if v is None else theta + v[m]).T for m in range(M)]
    pooled, per_view = variance_explained(A, A_hat)
    return FactorizationResult(
        theta=theta, v=v, lambdas=lambdas, objective_trace=trace,
        variance_explained=pooled, per_view_variance_explained=per_view,
        converged=converged, iterations=iters, config=config,
        seed=seed if isinstance(seed, (int, np.integer)) else None,
        degenerate=degenerate, view_names=list(names),
    )


def _prepare(mv, stats):
    A, S = _adjacency_arrays(mv), _stat_arrays(stats)
    names = _view_names(mv, len(A))
    _check_dims(A, S, names=names)
    return A, S, names


def fit(mv, stats, config: FactorizationConfig, seed: int | None = None,
        callback: Callable | None = None) -> FactorizationResult:
    """One ALS run from a single random ``Lambda`` initialization.

    ``seed`` defaults to ``config.seed``. ``callback(iteration, theta, v,
    lambdas)`` is invoked after every sweep.
    """
    A, S, names = _prepare(mv, stats)
    _rank_guard(A[0].shape[0], S, config.rank)
    return _fit(A, S, config, config.seed if seed is None else seed, True, names, callback)


def fit_single_view(A, stats, config: FactorizationConfig, seed: int | None = None,
                    callback: Callable | None = None) -> FactorizationResult:
    """Single-view model ``A ~ S Lambda Theta^T`` (no view-specific factor)."""
    A_list, S, names = _prepare(A, stats)
    if len(A_list) != 1:
        raise ValueError("fit_single_view takes exactly one adjacency matrix")
    _rank_guard(A_list[0].shape[0], S, config.rank)
    return _fit(A_list, S, config, config.seed if seed is None else seed, False, names, callback)


def derive_seeds(master: int, count: int) -> list[int]:
    """Independent per-restart seeds spawned from ``master`` via ``SeedSequence``."""
    children = np.random.SeedSequence(master).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def fit_multi_restart(mv, stats, config: FactorizationConfig, threads: int | None = None,
                      single_view: bool = False, callback: Callable | None = None) -> FactorizationResult:
    """Best of ``config.restarts`` fits by variance explained.

    Ties go to the lowest restart index, so the choice does not depend on the
    order in which parallel fits finish.
    """
    A, S, names = _prepare(mv, stats)
    if single_view and len(A) != 1:
        raise ValueError("single_view fits take exactly one view")
    _rank_guard(A[0].shape[0], S, config.rank)
    seeds = derive_seeds(config.seed, config.restarts)

    def run(seed):
        try:
            return _fit(A, S, config, seed, not single_view, names, callback)
        except (FitError, np.linalg.LinAlgError) as exc:
            logger.warning("restart with seed %d failed: %s", seed, exc)
            return exc

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, seeds))
    else:
        outcomes = [run(s) for s in seeds]

    scores = [o.variance_explained if isinstance(o, FactorizationResult) else float("nan") for o in outcomes]
    best = None
    for i, o in enumerate(outcomes):
        if not isinstance(o, FactorizationResult) or not np.isfinite(o.variance_explained):
            continue
        if best is None or o.variance_explained > outcomes[best].variance_explained:
            best = i
    if best is None:
        raise FitError(f"all {config.restarts} restarts failed")
    result = outcomes[best]
    result.restart_index = best
    result.restart_scores = scores
    return result


def _column_subset(stats: list, labels: tuple[str, ...]):
    out = []
    for s in stats:
        if not isinstance(s, StatMatrix):
            raise TypeError("subset scans need StatMatrix inputs with column labels")
        idx = [s.columns.index(c) for c in labels]
        out.append(StatMatrix(s.view_name, s.S[:, idx], labels, s.scaling))
    return out


def rank_scan(mv, stats, ranks: Sequence[int], config: FactorizationConfig,
              subset_sizes: Sequence[int] | None = None, threads: int | None = None) -> list[dict]:
    """Best-of-restarts variance explained for each rank (and statistic subset).

    With ``subset_sizes`` (e.g. ``(2, 3, 4)``) every combination of that many
    statistic columns is scanned at every rank; columns keep their original
    order within a subset.
    """
    if isinstance(stats, StatMatrix):
        stats = [stats]
    stats = list(stats)
    if subset_sizes:
        cols = stats[0].columns
        for s in stats[1:]:
            if s.columns != cols:
                raise ValueError("subset scans require identical statistic columns in every view")
        subsets = [c for size in subset_sizes for c in itertools.combinations(cols, size)]
    else:
        subsets = [None]
    rows = []
    for K in ranks:
        for labels in subsets:
            S = stats if labels is None else _column_subset(stats, labels)
            res = fit_multi_restart(mv, S, config.replace(rank=int(K)), threads=threads)
            rows.append({
                "rank": int(K),
                "statistics": "+".join(labels) if labels else "+".join(_labels(stats)),
                "variance_explained": res.variance_explained,
                "iterations": res.iterations,
                "converged": res.converged,
            })
    return rows


def _labels(stats) -> tuple[str, ...]:
    s = stats[0]
    if isinstance(s, StatMatrix) and len(s.columns) <= 16:
        return s.columns
    return ("S",)
