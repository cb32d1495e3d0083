"""Planted-community multiview networks with optional hub nodes."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .graph import Kind, MultiviewNetwork, NetworkView, NodeRegistry, Transform

__all__ = ["ViewSpec", "SynthSpec", "SynthNetwork", "generate", "write_synth", "exact_instance"]


@dataclass(frozen=True)
class ViewSpec:
    name: str
    kind: str = "weighted"
    geometric_p: float = 0.3
    within_prob: float | None = None
    between_prob: float | None = None


DEFAULT_VIEWS = (
    ViewSpec("retweet", "weighted"),
    ViewSpec("mentions", "weighted"),
    ViewSpec("follows", "binary"),
)


@dataclass(frozen=True)
class SynthSpec:
    """Directed block model shared by every view.

    Node ``i`` links to ``j`` with probability ``within_prob`` when both sit
    in the same community and ``between_prob`` otherwise. Incoming edge
    probabilities of hub nodes are multiplied by ``hub_multiplier`` (capped
    at 1). Weighted views draw a geometric count per edge and store
    ``log1p(count)``.
    """

    sizes: tuple[int, ...]
    within_prob: float
    between_prob: float
    hub_nodes: tuple[int, ...] = ()
    hub_multiplier: float = 1.0
    views: tuple[ViewSpec, ...] = DEFAULT_VIEWS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "hub_nodes", tuple(int(h) for h in self.hub_nodes))
        object.__setattr__(self, "views", tuple(v if isinstance(v, ViewSpec) else ViewSpec(**v) for v in self.views))
        if not self.sizes or min(self.sizes) < 1:
            raise ValueError("community sizes must be positive")
        probs = [self.within_prob, self.between_prob]
        probs += [p for v in self.views for p in (v.within_prob, v.between_prob) if p is not None]
        if any(not 0 <= p <= 1 for p in probs):
            raise ValueError("edge probabilities must lie in [0, 1]")
        if any(not 0 <= h < self.n for h in self.hub_nodes):
            raise ValueError("hub indices must be node positions")
        if self.hub_multiplier < 0:
            raise ValueError("hub_multiplier must be nonnegative")
        if not self.views:
            raise ValueError("at least one view is required")
        for v in self.views:
            Kind(v.kind)
            if not 0 < v.geometric_p <= 1:
                raise ValueError("geometric_p must lie in (0, 1]")

    @property
    def n(self) -> int:
        return sum(self.sizes)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        if "views" in d:
            d["views"] = tuple(ViewSpec(**v) for v in d["views"])
        return cls(**d)


@dataclass
class SynthNetwork:
    network: MultiviewNetwork
    labels: np.ndarray
    hubs: tuple[int, ...]
    counts: dict[str, np.ndarray] = field(default_factory=dict)


def node_ids(n: int) -> list[str]:
    width = max(1, len(str(n - 1)))
    return [f"n{i:0{width}d}" for i in range(n)]


def generate(spec: SynthSpec) -> SynthNetwork:
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    labels = np.repeat(np.arange(len(spec.sizes)), spec.sizes)
    same = labels[:, None] == labels[None, :]
    registry = NodeRegistry(node_ids(n))
    views, counts = [], {}
    for vs in spec.views:
        p_in = spec.within_prob if vs.within_prob is None else vs.within_prob
        p_out = spec.between_prob if vs.between_prob is None else vs.between_prob
        P = np.where(same, p_in, p_out)
        if spec.hub_nodes:
            hubs = list(spec.hub_nodes)
            P[:, hubs] = np.minimum(1.0, P[:, hubs] * spec.hub_multiplier)
        np.fill_diagonal(P, 0.0)
        present = rng.random((n, n)) < P
        if Kind(vs.kind) is Kind.WEIGHTED:
            c = np.where(present, rng.geometric(vs.geometric_p, size=(n, n)), 0)
            counts[vs.name] = c
            views.append(NetworkView(vs.name, np.log1p(c), Kind.WEIGHTED, Transform.LOG1P))
        else:
            c = present.astype(int)
            counts[vs.name] = c
            views.append(NetworkView(vs.name, c.astype(float), Kind.BINARY, Transform.NONE))
    return SynthNetwork(MultiviewNetwork(registry, tuple(views)), labels, spec.hub_nodes, counts)


def write_synth(net: SynthNetwork, out_dir, opener=None) -> dict[str, str]:
    """Edge lists (raw counts for weighted views), ``roster.txt`` and ``ground_truth.csv``.

    The roster keeps isolated nodes and the generation order when the edge
    lists are loaded back.

    ``opener(name)`` may redirect each file to a different path.
    """
    os.makedirs(out_dir, exist_ok=True)
    target = opener or (lambda name: os.path.join(out_dir, name))
    ids = net.network.registry.ids
    written = {}
    for view in net.network.views:
        path = target(f"{view.name}.tsv")
        c = net.counts[view.name]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            if view.weighted:
                w.writerow(["source", "target", "weight"])
                for i, j in np.argwhere(c > 0):
                    w.writerow([ids[i], ids[j], int(c[i, j])])
            else:
                w.writerow(["source", "target"])
                for i, j in np.argwhere(c > 0):
                    w.writerow([ids[i], ids[j]])
        written[view.name] = path
    roster = target("roster.txt")
    with open(roster, "w", encoding="utf-8") as fh:
        fh.write("".join(f"{node}\n" for node in ids))
    written["roster"] = roster
    truth = target("ground_truth.csv")
    hubs = set(net.hubs)
    with open(truth, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "community", "hub"])
        for i, node in enumerate(ids):
            w.writerow([node, int(net.labels[i]), int(i in hubs)])
    written["ground_truth"] = truth
    return written


def exact_instance(n: int, n_views: int, rank: int, n_stats: int = 4, epsilon: float = 1e-4, seed: int = 0):
    """Adjacency matrices built exactly as ``S_m Lambda_m (Theta + V_m)^T``.

    Returns ``(A, S, theta, V, lambdas)``; the nonnegative factors have
    entries drawn uniformly from ``[epsilon, 1]``. The ``A_m`` are dense and
    may be negative, so they are returned as plain arrays.
    """
    rng = np.random.default_rng(seed)
    theta = rng.uniform(epsilon, 1.0, size=(n, rank))
    V = [rng.uniform(epsilon, 1.0, size=(n, rank)) for _ in range(n_views)]
    S = [rng.normal(size=(n, n_stats)) for _ in range(n_views)]
    lambdas = [rng.normal(size=(n_stats, rank)) for _ in range(n_views)]
    A = [S[m] @ lambdas[m] @ (theta + V[m]).T for m in range(n_views)]
    return A, S, theta, V, lambdas
