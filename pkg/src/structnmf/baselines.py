"""PageRank and HITS by power iteration."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import NetworkView

__all__ = ["BaselineScores", "pagerank", "hits"]


@dataclass(frozen=True)
class BaselineScores:
    method: str
    scores: np.ndarray
    iterations: int
    converged: bool


def _adj(view) -> np.ndarray:
    return view.adjacency if isinstance(view, NetworkView) else np.asarray(view, dtype=float)


def pagerank(view, damping: float = 0.85, tol: float = 1e-12, max_iters: int = 1000) -> BaselineScores:
    """Weighted PageRank.

    A walker at ``i`` moves to ``j`` with probability proportional to
    ``A[i, j]``; nodes without out-edges teleport uniformly. Stops once the
    L1 change between iterates is at most ``tol``.
    """
    A = _adj(view)
    n = A.shape[0]
    if n < 1:
        raise ValueError("pagerank needs at least one node")
    out = A.sum(axis=1)
    dangling = out == 0
    P = np.zeros_like(A)
    P[~dangling] = A[~dangling] / out[~dangling, None]
    x = np.full(n, 1.0 / n)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        new = damping * (x @ P + x[dangling].sum() / n) + (1.0 - damping) / n
        new /= new.sum()
        err = np.abs(new - x).sum()
        x = new
        if err <= tol:
            converged = True
            break
    return BaselineScores("pagerank", x, it, converged)


def hits(view, tol: float = 1e-12, max_iters: int = 1000) -> tuple[BaselineScores, BaselineScores]:
    """Authority and hub scores, unit Euclidean norm.

    Alternates ``a <- A^T h``, ``h <- A a``, so ``a`` converges to the
    leading eigenvector of ``A^T A`` and ``h`` to that of ``A A^T``.
    """
    A = _adj(view)
    if not np.any(A):
        raise ValueError("HITS is undefined on a graph with no edges")
    n = A.shape[0]
    h = np.full(n, 1.0 / np.sqrt(n))
    a = np.zeros(n)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        a_new = A.T @ h
        a_new /= np.linalg.norm(a_new)
        h_new = A @ a_new
        h_new /= np.linalg.norm(h_new)
        err = np.abs(a_new - a).sum() + np.abs(h_new - h).sum()
        a, h = a_new, h_new
        if err <= tol:
            converged = True
            break
    return (BaselineScores("hits_authority", a, it, converged),
            BaselineScores("hits_hub", h, it, converged))
