"""Directed multiview networks over a shared node registry.

Views are stored as dense ``n x n`` float arrays; entry ``(i, j)`` is the
weight of the edge from node ``i`` to node ``j``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "EdgeListError",
    "Kind",
    "Transform",
    "NodeRegistry",
    "NetworkView",
    "MultiviewNetwork",
    "load_edge_list",
    "load_metadata",
    "load_roster",
    "write_edge_list",
    "export_dot",
    "densify_summary",
    "write_summary_json",
    "load_views",
]


class EdgeListError(ValueError):
    """Raised for malformed edge-list or metadata files."""


class Kind(str, Enum):
    WEIGHTED = "weighted"
    BINARY = "binary"


class Transform(str, Enum):
    NONE = "none"
    LOG1P = "log1p"


class NodeRegistry:
    """Ordered set of node identifiers shared by every view.

    New identifiers are appended in first-appearance order, so the position
    of a node never changes once it is registered.
    """

    def __init__(self, ids: Iterable[str] = (), metadata: Mapping[str, Mapping[str, str]] | None = None):
        self._ids: list[str] = []
        self._index: dict[str, int] = {}
        self.metadata: dict[str, dict[str, str]] = {}
        for node in ids:
            if node in self._index:
                raise ValueError(f"duplicate node id {node!r}")
            self.add(node)
        if metadata:
            for node, attrs in metadata.items():
                self.metadata[node] = dict(attrs)

    def add(self, node: str) -> int:
        pos = self._index.get(node)
        if pos is None:
            pos = len(self._ids)
            self._ids.append(node)
            self._index[node] = pos
        return pos

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self._ids)

    @property
    def index(self) -> dict[str, int]:
        return dict(self._index)

    def position(self, node: str) -> int:
        return self._index[node]

    def __contains__(self, node: object) -> bool:
        return node in self._index

    def __len__(self) -> int:
        return len(self._ids)

    def __iter__(self):
        return iter(self._ids)

    def __repr__(self) -> str:
        return f"NodeRegistry(n={len(self)})"

    def attribute(self, node: str, key: str) -> str | None:
        return self.metadata.get(node, {}).get(key)


@dataclass(frozen=True)
class NetworkView:
    """One relation (retweet, mention, follow, ...) over the registry.

    The adjacency array is made read-only on construction.
    """

    name: str
    adjacency: np.ndarray
    kind: Kind = Kind.WEIGHTED
    weight_transform: Transform = Transform.NONE
    dropped_self_loops: int = field(default=0, compare=False)

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=float)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError(f"view {self.name!r}: adjacency must be square, got {adj.shape}")
        if not np.all(np.isfinite(adj)) or np.any(adj < 0):
            raise ValueError(f"view {self.name!r}: adjacency entries must be finite and nonnegative")
        if np.any(np.diag(adj) != 0):
            raise ValueError(f"view {self.name!r}: self-loops are not allowed")
        kind = Kind(self.kind)
        if kind is Kind.BINARY and not np.all((adj == 0) | (adj == 1)):
            raise ValueError(f"view {self.name!r}: binary view must have 0/1 entries")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "weight_transform", Transform(self.weight_transform))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def weighted(self) -> bool:
        return self.kind is Kind.WEIGHTED

    def resized(self, n: int) -> "NetworkView":
        """Pad with isolated nodes up to ``n`` (registry grew after loading)."""
        if n == self.n:
            return self
        if n < self.n:
            raise ValueError("cannot shrink a view")
        adj = np.zeros((n, n))
        adj[: self.n, : self.n] = self.adjacency
        return NetworkView(self.name, adj, self.kind, self.weight_transform)


@dataclass(frozen=True)
class MultiviewNetwork:
    registry: NodeRegistry
    views: tuple[NetworkView, ...] = field(default_factory=tuple)

    def __post_init__(self):
        views = tuple(v.resized(len(self.registry)) for v in self.views)
        if not views:
            raise ValueError("a multiview network needs at least one view")
        names = [v.name for v in views]
        if len(set(names)) != len(names):
            raise ValueError(f"view names must be unique, got {names}")
        object.__setattr__(self, "views", views)

    @property
    def n(self) -> int:
        return len(self.registry)

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.views]

    def view(self, name: str) -> NetworkView:
        for v in self.views:
            if v.name == name:
                return v
        raise KeyError(f"no view named {name!r}; available: {self.names}")

    def adjacencies(self) -> list[np.ndarray]:
        return [v.adjacency for v in self.views]

    def permuted(self, order: Sequence[int]) -> "MultiviewNetwork":
        """Relabel nodes so that new position ``p`` holds old node ``order[p]``."""
        order = np.asarray(order)
        ids = [self.registry.ids[i] for i in order]
        reg = NodeRegistry(ids, self.registry.metadata)
        views = tuple(
            NetworkView(v.name, v.adjacency[np.ix_(order, order)], v.kind, v.weight_transform)
            for v in self.views
        )
        return MultiviewNetwork(reg, views)


def _detect_delimiter(line: str, delimiter: str | None) -> str:
    if delimiter:
        return delimiter
    return "\t" if "\t" in line else ","


def _is_header(fields: list[str]) -> bool:
    return len(fields) >= 2 and fields[0].strip().lower() in {"source", "src", "from"} \
        and fields[1].strip().lower() in {"target", "dst", "to"}


def load_edge_list(
    path,
    view_name: str,
    kind: Kind | str = Kind.WEIGHTED,
    transform: Transform | str = Transform.NONE,
    registry: NodeRegistry | None = None,
    delimiter: str | None = None,
) -> tuple[NetworkView, NodeRegistry]:
    """Read a ``source, target[, weight]`` file into a view.

    Duplicate ordered pairs have their weights summed before ``transform`` is
    applied; binary views set every listed edge to 1. Self-loops are dropped
    and counted in a warning. Returns the view and the (possibly grown)
    registry; unseen ids are appended in first-appearance order.
    """
    kind = Kind(kind)
    transform = Transform(transform)
    registry = NodeRegistry() if registry is None else registry
    expected = 3 if kind is Kind.WEIGHTED else 2

    edges: dict[tuple[int, int], float] = {}
    self_loops = 0
    saw_row = False
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [(no, ln) for no, ln in enumerate(fh, start=1)]
    data = [(no, ln) for no, ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    if not data:
        raise EdgeListError(f"{path}: empty edge list")
    delim = _detect_delimiter(data[0][1], delimiter)
    for k, (lineno, raw) in enumerate(data):
        fields = next(csv.reader([raw.rstrip("\r\n")], delimiter=delim))
        if k == 0 and _is_header(fields):
            continue
        if len(fields) != expected:
            raise EdgeListError(
                f"{path}:{lineno}: expected {expected} columns for a {kind.value} view, got {len(fields)}"
            )
        src, dst = fields[0].strip(), fields[1].strip()
        if not src or not dst:
            raise EdgeListError(f"{path}:{lineno}: empty node identifier")
        if kind is Kind.WEIGHTED:
            try:
                w = float(fields[2])
            except ValueError:
                raise EdgeListError(f"{path}:{lineno}: non-numeric weight {fields[2]!r}") from None
            if not math.isfinite(w) or w < 0:
                raise EdgeListError(f"{path}:{lineno}: weight must be a nonnegative number, got {fields[2]!r}")
        else:
            w = 1.0
        saw_row = True
        i, j = registry.add(src), registry.add(dst)
        if i == j:
            self_loops += 1
            continue
        edges[(i, j)] = edges.get((i, j), 0.0) + w
    if not saw_row:
        raise EdgeListError(f"{path}: edge list has a header but no rows")
    if self_loops:
        logger.warning("%s: dropped %d self-loop(s)", path, self_loops)

    n = len(registry)
    adj = np.zeros((n, n))
    for (i, j), w in edges.items():
        if kind is Kind.BINARY:
            adj[i, j] = 1.0
        elif transform is Transform.LOG1P:
            adj[i, j] = math.log1p(w)
        else:
            adj[i, j] = w
    return NetworkView(view_name, adj, kind, transform, self_loops), registry


def load_roster(path) -> NodeRegistry:
    """One node id per line; pins the node universe and its order."""
    with open(path, encoding="utf-8") as fh:
        ids = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    return NodeRegistry(ids)


def load_metadata(path, registry: NodeRegistry) -> NodeRegistry:
    """Attach CSV attributes (first column = node id) to ``registry``.

    Repeated node rows overwrite earlier values with a warning. Ids that are
    not in the registry are ignored with a warning.
    """
    unknown = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EdgeListError(f"{path}: empty metadata file") from None
        keys = [h.strip() for h in header[1:]]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise EdgeListError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            node = row[0].strip()
            if node not in registry:
                unknown += 1
                continue
            attrs = registry.metadata.setdefault(node, {})
            for key, value in zip(keys, row[1:]):
                if key in attrs and attrs[key] != value.strip():
                    logger.warning("%s:%d: overwriting %s[%s]", path, lineno, node, key)
                attrs[key] = value.strip()
    if unknown:
        logger.warning("%s: %d metadata row(s) for unknown nodes ignored", path, unknown)
    return registry


def write_edge_list(view: NetworkView, registry: NodeRegistry, path, delimiter: str = "\t") -> None:
    """Inverse of :func:`load_edge_list` with ``transform='none'``."""
    ids = registry.ids
    rows = np.argwhere(view.adjacency > 0)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        if view.weighted:
            w.writerow(["source", "target", "weight"])
            for i, j in rows:
                w.writerow([ids[i], ids[j], repr(float(view.adjacency[i, j]))])
        else:
            w.writerow(["source", "target"])
            for i, j in rows:
                w.writerow([ids[i], ids[j]])


def _dot_quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(view: NetworkView, registry: NodeRegistry, path, node_subset: Iterable[str] | None = None) -> None:
    """Write ``view`` (optionally restricted to ``node_subset``) as a DOT digraph."""
    if node_subset is None:
        keep = list(range(len(registry)))
    else:
        subset = list(node_subset)
        if not subset:
            raise ValueError("node_subset is empty")
        missing = sorted(set(s for s in subset if s not in registry))
        if missing:
            raise ValueError(f"unknown node ids in subset: {missing}")
        keep = sorted(set(registry.position(s) for s in subset))
    ids = registry.ids
    kept = set(keep)
    lines = [f"digraph {_dot_quote(view.name)} {{"]
    for i in keep:
        party = registry.attribute(ids[i], "party")
        attr = f" [class={_dot_quote(party)}, colorscheme=set312]" if party is not None else ""
        lines.append(f"  {_dot_quote(ids[i])}{attr};")
    for i, j in np.argwhere(view.adjacency > 0):
        if i in kept and j in kept:
            extra = f" [weight={float(view.adjacency[i, j])!r}]" if view.weighted else ""
            lines.append(f"  {_dot_quote(ids[i])} -> {_dot_quote(ids[j])}{extra};")
    lines.append("}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def densify_summary(mv: MultiviewNetwork) -> dict[str, dict]:
    """Per-view size summary.

    ``mean_degree`` counts distinct neighbours (in- or out-) per node;
    ``density`` is ``edge_count / (n (n - 1))`` over ordered pairs.
    """
    out = {}
    for v in mv.views:
        present = v.adjacency > 0
        n = v.n
        edges = int(present.sum())
        nbrs = (present | present.T).sum(axis=1)
        out[v.name] = {
            "n": n,
            "edge_count": edges,
            "mean_degree": float(nbrs.mean()) if n else 0.0,
            "density": edges / (n * (n - 1)) if n > 1 else 0.0,
            "degree_convention": "distinct in-or-out neighbours per node",
        }
    return out


def write_summary_json(mv: MultiviewNetwork, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(densify_summary(mv), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_views(specs: Sequence[Mapping], roster=None, metadata=None) -> MultiviewNetwork:
    """Load several views into one network; ``specs`` items need ``name`` and ``path``."""
    registry = load_roster(roster) if roster else NodeRegistry()
    pinned = len(registry) if roster else None
    views = []
    for s in specs:
        if not os.path.exists(s["path"]):
            raise FileNotFoundError(s["path"])
        view, registry = load_edge_list(
            s["path"], s["name"], s.get("kind", "weighted"), s.get("transform", "none"),
            registry, s.get("delimiter"),
        )
        views.append(view)
    if pinned is not None and len(registry) != pinned:
        extra = registry.ids[pinned:]
        raise EdgeListError(f"edge lists reference ids missing from the roster: {list(extra)[:10]}")
    if metadata:
        load_metadata(metadata, registry)
    return MultiviewNetwork(registry, tuple(views))
