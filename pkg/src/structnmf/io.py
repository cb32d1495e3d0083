"""CSV/JSON persistence for factors, tables and node scores."""
from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import asdict
from typing import Mapping, Sequence

import numpy as np

from .factorization import FactorizationConfig, FactorizationResult


def fmt(x) -> str:
    """Shortest round-trip text for a float; integers stay integers."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_table(path, rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> None:
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r.get(c, "")) for c in columns])


def write_matrix(path, M: np.ndarray, row_ids: Sequence[str], prefix: str = "k") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node"] + [f"{prefix}{j + 1}" for j in range(M.shape[1])])
        for node, row in zip(row_ids, M):
            w.writerow([node] + [repr(float(x)) for x in row])


def read_matrix(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    ids = [r[0] for r in rows[1:]]
    return ids, np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=float).reshape(len(ids), -1)


def read_scores(path, column: str | None = None) -> dict[str, float]:
    """Node -> score from a CSV whose first column is the node id.

    Uses ``column`` if given, else ``score``/``importance`` if present, else
    the last column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if len(fields) < 2:
            raise ValueError(f"{path}: need a node column and a score column")
        if column is None:
            column = next((c for c in ("score", "importance") if c in fields), fields[-1])
        if column not in fields:
            raise ValueError(f"{path}: no column {column!r}")
        key = "node" if "node" in fields else fields[0]
        return {row[key]: float(row[column]) for row in reader}


def save_result(result: FactorizationResult, ids: Sequence[str], stat_columns: Sequence[str], out_dir,
                extra: Mapping | None = None, opener=None) -> dict[str, str]:
    """Factor CSVs plus ``factorization.json``; returns name -> written path."""
    target = opener or (lambda name: os.path.join(out_dir, name))
    written = {}
    p = target("theta.csv")
    write_matrix(p, result.theta, ids)
    written["theta.csv"] = p
    for m, name in enumerate(result.view_names):
        if result.v is not None:
            p = target(f"v_{name}.csv")
            write_matrix(p, result.v[m], ids)
            written[f"v_{name}.csv"] = p
        p = target(f"lambda_{name}.csv")
        write_matrix(p, result.lambdas[m], stat_columns)
        written[f"lambda_{name}.csv"] = p
    manifest = {
        "views": result.view_names,
        "rank": result.rank,
        "config": _config_dict(result.config),
        "seed": result.seed,
        "restart_index": result.restart_index,
        "restart_variance_explained": result.restart_scores,
        "objective_trace": result.objective_trace,
        "variance_explained": result.variance_explained,
        "per_view_variance_explained": result.per_view_variance_explained,
        "converged": result.converged,
        "iterations": result.iterations,
        "degenerate": result.degenerate,
        "single_view": result.v is None,
    }
    if extra:
        manifest.update(extra)
    p = target("factorization.json")
    dump_json(manifest, p)
    written["factorization.json"] = p
    return written


def _config_dict(config: FactorizationConfig) -> dict:
    return asdict(config)


def load_result(out_dir) -> tuple[list[str], FactorizationResult]:
    with open(os.path.join(out_dir, "factorization.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    ids, theta = read_matrix(os.path.join(out_dir, "theta.csv"))
    v = None if meta["single_view"] else [read_matrix(os.path.join(out_dir, f"v_{n}.csv"))[1] for n in meta["views"]]
    lambdas = [read_matrix(os.path.join(out_dir, f"lambda_{n}.csv"))[1] for n in meta["views"]]
    result = FactorizationResult(
        theta=theta, v=v, lambdas=lambdas, objective_trace=meta["objective_trace"],
        variance_explained=meta["variance_explained"],
        per_view_variance_explained=meta["per_view_variance_explained"],
        converged=meta["converged"], iterations=meta["iterations"],
        config=FactorizationConfig(**meta["config"]), seed=meta["seed"],
        degenerate=meta["degenerate"], view_names=meta["views"],
        restart_index=meta["restart_index"], restart_scores=meta["restart_variance_explained"],
    )
    return ids, result


def dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=_json_default).encode()).hexdigest()
