"""Importance scores, rank tables and percentile subgraphs from fitted factors."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .factorization import FactorizationResult
from .graph import MultiviewNetwork, NetworkView, NodeRegistry

logger = logging.getLogger(__name__)

__all__ = [
    "InfluenceReport",
    "importance",
    "competition_ranks",
    "influence_report",
    "rank_table",
    "percentile_threshold",
    "percentile_subgraph",
    "Subgraph",
]


def importance(result: FactorizationResult | np.ndarray) -> np.ndarray:
    """Row sums of ``Theta``: a node's total incoming weight over all components."""
    theta = result.theta if isinstance(result, FactorizationResult) else np.asarray(result, dtype=float)
    return theta.sum(axis=1)


def competition_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks, highest score first; tied scores share the smaller rank."""
    scores = np.asarray(scores, dtype=float)
    ranks = np.empty(len(scores), dtype=int)
    order = np.argsort(-scores, kind="stable")
    prev = None
    for pos, i in enumerate(order, start=1):
        if prev is None or scores[i] != scores[prev]:
            current = pos
        ranks[i] = current
        prev = i
    return ranks


@dataclass
class InfluenceReport:
    ids: tuple[str, ...]
    importance: np.ndarray
    per_view_scores: dict[str, np.ndarray]
    ranks: np.ndarray
    metadata: dict[str, dict[str, str]] = field(default_factory=dict)


def influence_report(result: FactorizationResult, registry: NodeRegistry) -> InfluenceReport:
    imp = importance(result)
    if len(imp) != len(registry):
        raise ValueError(f"result has {len(imp)} nodes but registry has {len(registry)}")
    names = result.view_names or [f"view{m}" for m in range(len(result.lambdas))]
    per_view = {name: result.view_scores(m) for m, name in enumerate(names)}
    return InfluenceReport(registry.ids, imp, per_view, competition_ranks(imp), dict(registry.metadata))


def rank_table(report: InfluenceReport, top: int | None = None, metadata_keys=None) -> list[dict]:
    """Rows sorted by descending importance, ties broken by node id."""
    n = len(report.ids)
    if top is None:
        top = n
    if top < 0:
        raise ValueError("top must be nonnegative")
    if top > n:
        logger.warning("top=%d exceeds n=%d; returning all nodes", top, n)
        top = n
    keys = list(metadata_keys) if metadata_keys is not None else sorted(
        {k for attrs in report.metadata.values() for k in attrs}
    )
    order = sorted(range(n), key=lambda i: (-report.importance[i], report.ids[i]))
    rows = []
    for i in order[:top]:
        row = {"rank": int(report.ranks[i]), "node": report.ids[i], "importance": float(report.importance[i])}
        attrs = report.metadata.get(report.ids[i], {})
        for k in keys:
            row[k] = attrs.get(k, "")
        rows.append(row)
    return rows


def percentile_threshold(scores: np.ndarray, q: float) -> float:
    """Smallest score with strictly more than ``q`` percent of scores at or below it.

    This is the nearest-rank rule evaluated at position ``floor(q n / 100) + 1``
    of the ascending order, so ``q = 0`` gives the minimum and any ``q < 100``
    leaves at least one node at or above the threshold.
    """
    if not 0 <= q < 100:
        raise ValueError(f"q must lie in [0, 100), got {q}")
    s = np.sort(np.asarray(scores, dtype=float))
    pos = min(int(math.floor(q * len(s) / 100.0)), len(s) - 1)
    return float(s[pos])


@dataclass
class Subgraph:
    nodes: list[str]
    positions: np.ndarray
    scores: np.ndarray
    threshold: float
    view: NetworkView
    registry: NodeRegistry


def percentile_subgraph(result: FactorizationResult, mv: MultiviewNetwork, view: str | int, q: float = 95.0) -> Subgraph:
    """Induced subgraph of one view on nodes in the top ``q``-th percentile of ``sum_k (Theta + V_m)``."""
    m = mv.names.index(view) if isinstance(view, str) else int(view)
    scores = result.view_scores(m)
    thr = percentile_threshold(scores, q)
    keep = np.flatnonzero(scores >= thr)
    ids = [mv.registry.ids[i] for i in keep]
    src = mv.views[m]
    sub = NetworkView(src.name, src.adjacency[np.ix_(keep, keep)], src.kind, src.weight_transform)
    reg = NodeRegistry(ids, {k: v for k, v in mv.registry.metadata.items() if k in set(ids)})
    return Subgraph(ids, keep, scores[keep], thr, sub, reg)
