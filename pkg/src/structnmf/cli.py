"""Command-line entry point.

Exit codes: 0 success, 1 numerical failure, 2 I/O or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .evaluation import GlmError
from .factorization import FitError
from .graph import EdgeListError
from .pipeline import ConfigError, RegressConfig, ViewConfig, load_config, run_pipeline
from .synth import SynthSpec

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger("structnmf")

EXIT_OK, EXIT_NUMERIC, EXIT_IO = 0, 1, 2


def _csv_list(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def _int_ranges(s: str) -> list[int]:
    out = []
    for part in _csv_list(s):
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def _edges(s: str) -> ViewConfig:
    """``NAME=PATH[:kind[:transform]]``"""
    if "=" not in s:
        raise argparse.ArgumentTypeError("expected NAME=PATH[:kind[:transform]]")
    name, rest = s.split("=", 1)
    parts = rest.split(":")
    kind = parts[1] if len(parts) > 1 else "weighted"
    transform = parts[2] if len(parts) > 2 else ("log1p" if kind == "weighted" else "none")
    return ViewConfig(name, parts[0], kind, transform)


def _global_parser() -> argparse.ArgumentParser:
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", default=argparse.SUPPRESS, help="TOML run config")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="cap on worker threads")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    g.add_argument("--edges", type=_edges, action="append", default=argparse.SUPPRESS,
                   help="view as NAME=PATH[:weighted|binary[:none|log1p]]; repeatable")
    g.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    return g


def build_parser() -> argparse.ArgumentParser:
    g = _global_parser()
    p = argparse.ArgumentParser(prog="structnmf", parents=[g],
                                description="Structured Semi-NMF influence measures for multiview networks")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("stats", parents=[g], help="per-node network statistics CSV")

    f = sub.add_parser("factorize", parents=[g], help="fit the multiview factorization")
    f.add_argument("--rank", type=int)
    f.add_argument("--restarts", type=int)
    f.add_argument("--semi-nmf", action="store_true", help="use S = I (plain Semi-NMF)")

    s = sub.add_parser("scree", parents=[g], help="variance explained by rank")
    s.add_argument("--ranks", type=_int_ranges, help="e.g. 1-8 or 2,4,6")
    s.add_argument("--subsets", type=_int_ranges, help="statistic subset sizes, e.g. 2-4")
    s.add_argument("--restarts", type=int)

    r = sub.add_parser("rank", parents=[g], help="importance rank table from saved factors")
    r.add_argument("--top", type=int)

    sg = sub.add_parser("subgraph", parents=[g], help="top-percentile induced subgraph")
    sg.add_argument("--view")
    sg.add_argument("--q", type=float)

    b = sub.add_parser("baseline", parents=[g], help="PageRank or HITS scores")
    b.add_argument("--method", choices=["pagerank", "hits"])
    b.add_argument("--view")
    b.add_argument("--damping", type=float)

    rg = sub.add_parser("regress", parents=[g], help="quasi-Poisson RMSE comparison")
    rg.add_argument("--outcome", help="CSV: node id, count column, optional controls")
    rg.add_argument("--outcome-column")
    rg.add_argument("--controls", help="CSV: node id + control covariates")
    rg.add_argument("--influence", type=_csv_list, help="score CSVs, comma separated")
    rg.add_argument("--categorical", type=_csv_list)
    rg.add_argument("--fixed-effects", type=_csv_list)
    rg.add_argument("--exclude", type=_csv_list, help="node ids to drop")
    rg.add_argument("--exclude-flag", help="drop rows where this column is true")

    sy = sub.add_parser("synth", parents=[g], help="write a planted-community synthetic network")
    sy.add_argument("--spec", help="TOML with SynthSpec fields (top level or [synth] table)")

    run = sub.add_parser("run", parents=[g], help="run the configured stages")
    run.add_argument("--stages", type=_csv_list)
    return p


def _apply_overrides(cfg, args) -> None:
    fc = cfg.factorization
    changes = {}
    if getattr(args, "rank", None):
        changes["rank"] = args.rank
    if getattr(args, "restarts", None):
        changes["restarts"] = args.restarts
    if changes:
        cfg.factorization = fc.replace(**changes)
    if getattr(args, "semi_nmf", False):
        cfg.semi_nmf = True
    if getattr(args, "ranks", None):
        cfg.scree_ranks = args.ranks
    if getattr(args, "subsets", None):
        cfg.scree_subset_sizes = args.subsets
    if getattr(args, "top", None) is not None:
        cfg.top = args.top
    if args.command == "subgraph":
        if args.view:
            cfg.subgraph_view = args.view
        if args.q is not None:
            cfg.q = args.q
    if args.command == "baseline":
        if args.method:
            cfg.baseline_method = args.method
        if args.view:
            cfg.baseline_view = args.view
        if args.damping is not None:
            cfg.damping = args.damping
    if args.command == "regress":
        rc: RegressConfig = cfg.regress
        for attr in ("outcome", "controls", "outcome_column", "exclude_flag"):
            val = getattr(args, attr)
            if val:
                setattr(rc, attr, os.path.abspath(val) if attr in ("outcome", "controls") else val)
        for attr in ("influence", "categorical", "fixed_effects", "exclude"):
            val = getattr(args, attr)
            if val:
                setattr(rc, attr, [os.path.abspath(v) for v in val] if attr == "influence" else val)
    if args.command == "synth" and args.spec:
        with open(args.spec, "rb") as fh:
            raw = tomllib.load(fh)
        raw = dict(raw.get("synth", raw))
        raw.setdefault("seed", cfg.seed)
        cfg.synth = SynthSpec.from_dict(raw)
    cfg.validate()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    verbose = getattr(args, "verbose", 0) or 0
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(getattr(args, "config", None), seed=getattr(args, "seed", None),
                          threads=getattr(args, "threads", None), out=getattr(args, "out", None))
        if getattr(args, "edges", None):
            cfg.views = [ViewConfig(v.name, os.path.abspath(v.path), v.kind, v.transform) for v in args.edges]
        _apply_overrides(cfg, args)
        if args.command == "run":
            stages = args.stages or cfg.stages
        else:
            stages = [args.command]
        manifest = run_pipeline(cfg, stages)
    except (FitError, GlmError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"structnmf: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"structnmf: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, EdgeListError, OSError, ValueError, KeyError, tomllib.TOMLDecodeError) as exc:
        print(f"structnmf: {exc}", file=sys.stderr)
        return EXIT_IO
    for rel in sorted(manifest["files"]):
        print(os.path.join(cfg.out, rel))
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
