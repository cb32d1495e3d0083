"""Node-level statistics used to build the structure matrices ``S_m``.

Conventions
-----------
* Clustering is computed on the symmetrized projection of a directed view:
  an undirected edge exists if either direction does, and its weight is the
  larger of the two directed weights.
* Betweenness and closeness follow edge direction. On weighted views the
  length of an edge is ``1 / weight``.
* Closeness is harmonic, ``(1/(n-1)) * sum_j 1/d(i, j)`` with ``1/inf = 0``.
* Degree is total: distinct in-or-out neighbours, or in-plus-out strength.
"""
from __future__ import annotations

import heapq
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .graph import NetworkView

__all__ = [
    "STATISTICS",
    "StatMatrix",
    "degree",
    "clustering_coefficient",
    "betweenness",
    "closeness",
    "build_stat_matrix",
    "standardize_columns",
    "scale_columns",
    "identity_stat_matrix",
]

STATISTICS = ("clustering", "betweenness", "closeness", "degree")
SCALINGS = ("none", "zscore", "unit")

# Relative slack when comparing float path lengths; keeps ties that differ
# only by summation order.
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class StatMatrix:
    view_name: str
    S: np.ndarray
    columns: tuple[str, ...]
    scaling: str = "none"

    def __post_init__(self):
        S = np.array(self.S, dtype=float)
        if S.ndim != 2 or S.shape[1] != len(self.columns):
            raise ValueError("S must be n x D with one label per column")
        if not np.all(np.isfinite(S)):
            raise ValueError(f"statistics for view {self.view_name!r} contain non-finite values")
        if len(set(self.columns)) != len(self.columns) or not self.columns:
            raise ValueError("column labels must be unique and nonempty")
        S.setflags(write=False)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "columns", tuple(self.columns))
        if self.scaling not in SCALINGS:
            raise ValueError(f"scaling must be one of {SCALINGS}")

    @property
    def standardized(self) -> bool:
        return self.scaling == "zscore"

    def column(self, name: str) -> np.ndarray:
        return self.S[:, self.columns.index(name)]


def _adj(view) -> np.ndarray:
    return view.adjacency if isinstance(view, NetworkView) else np.asarray(view, dtype=float)


def _is_weighted(view, weighted: bool | None) -> bool:
    if weighted is not None:
        return weighted
    return view.weighted if isinstance(view, NetworkView) else True


def degree(view, weighted: bool | None = None) -> np.ndarray:
    """Total degree: distinct neighbours, or in+out strength when weighted."""
    A = _adj(view)
    if _is_weighted(view, weighted):
        return A.sum(axis=0) + A.sum(axis=1)
    present = A > 0
    return (present | present.T).sum(axis=1).astype(float)


def clustering_coefficient(view, weighted: bool | None = None) -> np.ndarray:
    """Local clustering on the symmetrized projection.

    The weighted variant is Barrat's coefficient,
    ``1/(s_i (k_i - 1)) * sum_{j,h} (w_ij + w_ih)/2 * a_ij a_ih a_jh``,
    with ``s_i`` the strength in the symmetrized graph. Nodes with fewer
    than two neighbours get 0.
    """
    A = _adj(view)
    W = np.maximum(A, A.T)
    a = (W > 0).astype(float)
    k = a.sum(axis=1)
    out = np.zeros(A.shape[0])
    ok = k >= 2
    if _is_weighted(view, weighted):
        s = W.sum(axis=1)
        # a is symmetric, so swapping j and h folds (w_ij + w_ih)/2 into w_ij
        paired = np.einsum("ij,jh,ih->i", W, a, a)
        out[ok] = paired[ok] / (s[ok] * (k[ok] - 1))
    else:
        tri2 = np.einsum("ij,jh,hi->i", a, a, a)
        out[ok] = tri2[ok] / (k[ok] * (k[ok] - 1))
    return out


def _successors(A: np.ndarray, weighted: bool):
    succ = []
    for i in range(A.shape[0]):
        js = np.flatnonzero(A[i])
        if weighted:
            succ.append([(int(j), 1.0 / A[i, j]) for j in js])
        else:
            succ.append([(int(j), 1.0) for j in js])
    return succ


def _sssp_unweighted(succ, s, n):
    dist = [-1.0] * n
    sigma = [0.0] * n
    preds: list[list[int]] = [[] for _ in range(n)]
    order = []
    dist[s] = 0.0
    sigma[s] = 1.0
    q = deque([s])
    while q:
        v = q.popleft()
        order.append(v)
        for w, _ in succ[v]:
            if dist[w] < 0:
                dist[w] = dist[v] + 1
                q.append(w)
            if dist[w] == dist[v] + 1:
                sigma[w] += sigma[v]
                preds[w].append(v)
    return order, sigma, preds, dist


def _sssp_weighted(succ, s, n):
    dist = [float("inf")] * n
    sigma = [0.0] * n
    preds: list[list[int]] = [[] for _ in range(n)]
    order = []
    done = [False] * n
    dist[s] = 0.0
    sigma[s] = 1.0
    heap = [(0.0, s)]
    while heap:
        d, v = heapq.heappop(heap)
        if done[v] or d > dist[v]:
            continue
        done[v] = True
        order.append(v)
        for w, length in succ[v]:
            if done[w]:
                continue
            nd = d + length
            cur = dist[w]
            if nd < cur and not _close(nd, cur):
                dist[w] = nd
                sigma[w] = sigma[v]
                preds[w] = [v]
                heapq.heappush(heap, (nd, w))
            elif _close(nd, cur):
                sigma[w] += sigma[v]
                preds[w].append(v)
    dist = [d if d != float("inf") else -1.0 for d in dist]
    return order, sigma, preds, dist


def _close(a: float, b: float) -> bool:
    if b == float("inf"):
        return False
    return abs(a - b) <= _TIE_RTOL * max(1.0, abs(a), abs(b))


def _per_source(A, weighted, sources, fn, threads):
    succ = _successors(A, weighted)
    n = A.shape[0]
    sssp = _sssp_weighted if weighted else _sssp_unweighted
    work = lambda s: fn(s, *sssp(succ, s, n))
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, sources))
    else:
        parts = [work(s) for s in sources]
    # summed in source order regardless of completion order
    return np.sum(parts, axis=0) if parts else np.zeros(n)


def betweenness(view, weighted: bool | None = None, threads: int | None = None) -> np.ndarray:
    """Unnormalized directed betweenness by Brandes' dependency accumulation.

    Counts ordered source/target pairs, so a node bridging both directions
    of a bidirected pair is credited twice.
    """
    A = _adj(view)
    n = A.shape[0]

    def accumulate(s, order, sigma, preds, dist):
        delta = np.zeros(n)
        for w in reversed(order):
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
        delta[s] = 0.0
        return delta

    return _per_source(A, _is_weighted(view, weighted), range(n), accumulate, threads)


def closeness(view, weighted: bool | None = None, threads: int | None = None) -> np.ndarray:
    """Harmonic closeness along out-going directed paths."""
    A = _adj(view)
    n = A.shape[0]
    if n < 2:
        return np.zeros(n)

    def harmonic(s, order, sigma, preds, dist):
        row = np.zeros(n)
        d = np.array(dist)
        reach = d > 0
        row[s] = np.sum(1.0 / d[reach]) / (n - 1)
        return row

    return _per_source(A, _is_weighted(view, weighted), range(n), harmonic, threads)


_FUNCS = {
    "clustering": clustering_coefficient,
    "betweenness": betweenness,
    "closeness": closeness,
    "degree": degree,
}


def standardize_columns(S: np.ndarray) -> np.ndarray:
    """Z-score each column (population sd); constant columns become zero."""
    S = np.asarray(S, dtype=float)
    mu = S.mean(axis=0)
    sd = S.std(axis=0)
    Z = np.zeros_like(S)
    ok = sd > 1e-12 * np.maximum(1.0, np.abs(mu))
    Z[:, ok] = (S[:, ok] - mu[ok]) / sd[ok]
    return Z


def scale_columns(S: np.ndarray) -> np.ndarray:
    """Divide each column by its population sd without centering; constant columns unchanged."""
    S = np.asarray(S, dtype=float)
    sd = S.std(axis=0)
    ok = sd > 1e-12 * np.maximum(1.0, np.abs(S).max(axis=0))
    out = S.copy()
    out[:, ok] = S[:, ok] / sd[ok]
    return out


def build_stat_matrix(view: NetworkView, statistics=STATISTICS, scaling: str = "unit",
                      threads: int | None = None) -> StatMatrix:
    """Stack the requested statistics, in order, into an ``n x D`` matrix.

    Weighted views automatically use the weighted variants. ``scaling`` is
    ``"unit"`` (divide by sd, keep the sign and mean of each statistic),
    ``"zscore"`` (center and divide by sd) or ``"none"``. Centering removes
    the factorization's ability to express columns of ``A`` with a positive
    mean, such as the in-links of a broadly cited node, hence the default.
    """
    if scaling not in SCALINGS:
        raise ValueError(f"scaling must be one of {SCALINGS}")
    statistics = tuple(statistics)
    if not statistics:
        raise ValueError("at least one statistic is required")
    unknown = [s for s in statistics if s not in _FUNCS]
    if unknown:
        raise ValueError(f"unknown statistics {unknown}; choose from {STATISTICS}")
    cols = []
    for name in statistics:
        fn = _FUNCS[name]
        if name in ("betweenness", "closeness"):
            cols.append(fn(view, threads=threads))
        else:
            cols.append(fn(view))
    S = np.column_stack(cols)
    if scaling == "zscore":
        S = standardize_columns(S)
    elif scaling == "unit":
        S = scale_columns(S)
    return StatMatrix(view.name, S, statistics, scaling)


def identity_stat_matrix(view_name: str, n: int) -> StatMatrix:
    """``S = I``: turns the structured model into plain Semi-NMF."""
    return StatMatrix(view_name, np.eye(n), tuple(f"node_{i}" for i in range(n)))
