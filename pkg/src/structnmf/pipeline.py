"""Run configuration and the staged pipeline behind the CLI.

Stages run in a fixed dependency order::

    synth -> stats -> factorize -> scree -> rank -> subgraph -> baseline -> regress

Every stage writes its files as ``<name>.partial`` and renames them once the
stage finishes, so a failed stage leaves only ``.partial`` files behind.
Each run ends by writing ``manifest.json`` in the output directory.
"""
from __future__ import annotations

import logging
import os
import platform
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone

import numpy as np
import pandas as pd

from . import __version__
from .baselines import hits, pagerank
from .evaluation import assemble_dataset, compare_models, fit_quasipoisson
from .factorization import FactorizationConfig, derive_seeds, fit_multi_restart, rank_scan
from .graph import MultiviewNetwork, densify_summary, export_dot, load_views
from .influence import competition_ranks, influence_report, percentile_subgraph, rank_table
from .io import dump_json, load_result, read_scores, save_result, sha256_file, sha256_json, write_table
from .netstats import STATISTICS, StatMatrix, build_stat_matrix, identity_stat_matrix
from .synth import SynthSpec, generate, write_synth

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

STAGES = ("synth", "stats", "factorize", "scree", "rank", "subgraph", "baseline", "regress")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class ViewConfig:
    name: str
    path: str
    kind: str = "weighted"
    transform: str = "none"
    delimiter: str | None = None


@dataclass
class RegressConfig:
    outcome: str | None = None
    outcome_column: str = "count"
    controls: str | None = None
    numeric: list[str] = field(default_factory=list)
    categorical: list[str] = field(default_factory=list)
    fixed_effects: list[str] = field(default_factory=list)
    influence: list[str] = field(default_factory=list)
    exclude: list[str] = field(default_factory=list)
    exclude_flag: str | None = None


@dataclass
class RunConfig:
    views: list[ViewConfig] = field(default_factory=list)
    statistics: tuple[str, ...] = STATISTICS
    scaling: str = "unit"
    semi_nmf: bool = False
    factorization: FactorizationConfig = field(default_factory=lambda: FactorizationConfig(rank=6))
    out: str = "results"
    seed: int = 0
    threads: int = 1
    roster: str | None = None
    metadata: str | None = None
    baseline_view: str | None = None
    baseline_method: str = "pagerank"
    damping: float = 0.85
    subgraph_view: str | None = None
    q: float = 95.0
    top: int | None = None
    scree_ranks: list[int] = field(default_factory=lambda: list(range(1, 9)))
    scree_subset_sizes: list[int] = field(default_factory=list)
    synth: SynthSpec | None = None
    regress: RegressConfig = field(default_factory=RegressConfig)
    stages: list[str] = field(default_factory=lambda: ["stats", "factorize", "rank"])

    def validate(self) -> None:
        names = [v.name for v in self.views]
        if len(set(names)) != len(names):
            raise ConfigError(f"view names must be unique: {names}")
        if not 0 <= self.q < 100:
            raise ConfigError(f"q must lie in [0, 100), got {self.q}")
        bad = [s for s in self.stages if s not in STAGES]
        if bad:
            raise ConfigError(f"unknown stages {bad}; choose from {STAGES}")
        if self.baseline_method not in ("pagerank", "hits"):
            raise ConfigError("baseline method must be pagerank or hits")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["statistics"] = list(self.statistics)
        return d


def _resolve(base: str, p: str | None) -> str | None:
    if p is None or os.path.isabs(p):
        return p
    return os.path.normpath(os.path.join(base, p))


def _pick(cls, d: dict, where: str) -> dict:
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(extra)}")
    return d


def load_config(path: str | None = None, **overrides) -> RunConfig:
    """Read a TOML run config; relative paths resolve against its directory.

    Keyword ``overrides`` (``seed``, ``threads``, ``out``) win over the file.
    """
    raw: dict = {}
    base = os.getcwd()
    if path is not None:
        if not os.path.exists(path):
            raise FileNotFoundError(path)
        with open(path, "rb") as fh:
            try:
                raw = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        base = os.path.dirname(os.path.abspath(path))
    return config_from_dict(raw, base, **overrides)


def config_from_dict(raw: dict, base: str | None = None, **overrides) -> RunConfig:
    base = base or os.getcwd()
    raw = dict(raw)
    try:
        views = [ViewConfig(**_pick(ViewConfig, dict(v), "views")) for v in raw.pop("views", [])]
        for v in views:
            v.path = _resolve(base, v.path)
        stats = dict(raw.pop("statistics", {}))
        fact = dict(raw.pop("factorization", {}))
        seed = overrides.get("seed") if overrides.get("seed") is not None else raw.pop("seed", 0)
        raw.pop("seed", None)
        fact.setdefault("rank", 6)
        fact["seed"] = seed
        factorization = FactorizationConfig(**_pick(FactorizationConfig, fact, "factorization"))
        baseline = dict(raw.pop("baseline", {}))
        subgraph = dict(raw.pop("subgraph", {}))
        scree = dict(raw.pop("scree", {}))
        rank = dict(raw.pop("rank", {}))
        synth_raw = raw.pop("synth", None)
        synth = None
        if synth_raw is not None:
            synth_raw = dict(synth_raw)
            synth_raw.setdefault("seed", seed)
            synth = SynthSpec.from_dict(synth_raw)
        reg = dict(raw.pop("regress", {}))
        regress = RegressConfig(**_pick(RegressConfig, reg, "regress"))
        for attr in ("outcome", "controls"):
            setattr(regress, attr, _resolve(base, getattr(regress, attr)))
        regress.influence = [_resolve(base, p) if not p.startswith("@") else p for p in regress.influence]
        cfg = RunConfig(
            views=views,
            statistics=tuple(stats.pop("use", STATISTICS)),
            scaling=stats.pop("scaling", "unit"),
            semi_nmf=bool(stats.pop("semi_nmf", False)),
            factorization=factorization,
            out=os.path.abspath(overrides["out"]) if overrides.get("out") else _resolve(base, raw.pop("out", "results")),
            seed=int(seed),
            threads=int(overrides.get("threads") or raw.pop("threads", 1)),
            roster=_resolve(base, raw.pop("roster", None)),
            metadata=_resolve(base, raw.pop("metadata", None)),
            baseline_view=baseline.pop("view", None),
            baseline_method=baseline.pop("method", "pagerank"),
            damping=float(baseline.pop("damping", 0.85)),
            subgraph_view=subgraph.pop("view", None),
            q=float(subgraph.pop("q", 95.0)),
            top=rank.pop("top", None),
            scree_ranks=list(scree.pop("ranks", range(1, 9))),
            scree_subset_sizes=list(scree.pop("subset_sizes", [])),
            synth=synth,
            regress=regress,
            stages=list(raw.pop("stages", ["stats", "factorize", "rank"])),
        )
        raw.pop("out", None)
        raw.pop("threads", None)
        leftovers = {k: v for k, v in [("statistics", stats), ("baseline", baseline), ("subgraph", subgraph),
                                       ("scree", scree), ("rank", rank)] if v}
        if raw or leftovers:
            raise ConfigError(f"unknown config keys: {sorted(raw) + sorted(leftovers)}")
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


class Outputs:
    """Stage-scoped writer: files land as ``.partial`` until :meth:`commit`."""

    def __init__(self, root: str):
        self.root = root
        self.pending: list[str] = []
        self.files: list[str] = []

    def path(self, name: str) -> str:
        final = os.path.join(self.root, name)
        os.makedirs(os.path.dirname(final), exist_ok=True)
        self.pending.append(final)
        return final + ".partial"

    def commit(self) -> None:
        for final in self.pending:
            os.replace(final + ".partial", final)
            if final not in self.files:
                self.files.append(final)
        self.pending = []


@dataclass
class Context:
    config: RunConfig
    out: Outputs
    network: MultiviewNetwork | None = None
    stats: list[StatMatrix] | None = None
    result: object = None
    scores: dict[str, dict[str, float]] = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)

    def require_network(self) -> MultiviewNetwork:
        if self.network is None:
            cfg = self.config
            if not cfg.views and cfg.synth is not None:
                # reuse a synthetic network written by an earlier run
                _use_synth_views(cfg)
            if not cfg.views:
                raise ConfigError("no views configured")
            for v in cfg.views:
                if not os.path.exists(v.path):
                    raise FileNotFoundError(v.path)
            self.network = load_views([asdict(v) for v in cfg.views], cfg.roster, cfg.metadata)
        return self.network

    def require_stats(self) -> list[StatMatrix]:
        if self.stats is None:
            mv = self.require_network()
            if self.config.semi_nmf:
                self.stats = [identity_stat_matrix(v.name, mv.n) for v in mv.views]
            else:
                self.stats = [build_stat_matrix(v, self.config.statistics, self.config.scaling,
                                                threads=self.config.threads) for v in mv.views]
        return self.stats

    def require_result(self):
        if self.result is None:
            ids, self.result = load_result(self.config.out)
            if list(ids) != list(self.require_network().registry.ids):
                raise ConfigError("saved factors do not match the configured network's nodes")
        return self.result

    def view_name(self, name: str | None) -> str:
        mv = self.require_network()
        if name is None:
            return "retweet" if "retweet" in mv.names else mv.names[0]
        if name not in mv.names:
            raise ConfigError(f"unknown view {name!r}; available: {mv.names}")
        return name


def stage_synth(ctx: Context) -> None:
    cfg = ctx.config
    if cfg.synth is None:
        raise ConfigError("synth stage needs a [synth] section")
    net = generate(cfg.synth)
    write_synth(net, os.path.join(cfg.out, "synth"), opener=lambda n: ctx.out.path(os.path.join("synth", n)))
    if not cfg.views:
        _use_synth_views(cfg)
    ctx.network = None


def _use_synth_views(cfg: RunConfig) -> None:
    """Point an edge-list-free config at the synthetic network under ``out/synth``."""
    root = os.path.join(cfg.out, "synth")
    cfg.views = [
        ViewConfig(v.name, os.path.join(root, f"{v.name}.tsv"), v.kind,
                   "log1p" if v.kind == "weighted" else "none")
        for v in cfg.synth.views
    ]
    if cfg.roster is None:
        cfg.roster = os.path.join(root, "roster.txt")


def stage_stats(ctx: Context) -> None:
    mv = ctx.require_network()
    raw = [build_stat_matrix(v, ctx.config.statistics, "none", threads=ctx.config.threads) for v in mv.views]
    rows = []
    for i, node in enumerate(mv.registry.ids):
        row = {"node": node}
        for sm in raw:
            for j, col in enumerate(sm.columns):
                row[f"{sm.view_name}.{col}"] = float(sm.S[i, j])
        rows.append(row)
    cols = ["node"] + [f"{sm.view_name}.{c}" for sm in raw for c in sm.columns]
    write_table(ctx.out.path("stats.csv"), rows, cols)
    dump_json(densify_summary(mv), ctx.out.path("summary.json"))


def stage_factorize(ctx: Context) -> None:
    mv = ctx.require_network()
    stats = ctx.require_stats()
    fc = ctx.config.factorization
    res = fit_multi_restart(mv, stats, fc, threads=ctx.config.threads, single_view=False)
    ctx.result = res
    ctx.seeds = derive_seeds(fc.seed, fc.restarts)
    save_result(res, mv.registry.ids, stats[0].columns, ctx.config.out,
                extra={"restart_seeds": ctx.seeds, "statistics": list(stats[0].columns),
                       "scaling": ctx.config.scaling, "semi_nmf": ctx.config.semi_nmf},
                opener=ctx.out.path)


def stage_scree(ctx: Context) -> None:
    mv = ctx.require_network()
    rows = rank_scan(mv, ctx.require_stats(), ctx.config.scree_ranks, ctx.config.factorization,
                     subset_sizes=ctx.config.scree_subset_sizes or None, threads=ctx.config.threads)
    write_table(ctx.out.path("scree.csv"), rows,
                ["rank", "statistics", "variance_explained", "iterations", "converged"])


def stage_rank(ctx: Context) -> None:
    mv = ctx.require_network()
    report = influence_report(ctx.require_result(), mv.registry)
    rows = rank_table(report, ctx.config.top)
    keys = sorted({k for r in rows for k in r} - {"rank", "node", "importance"})
    cols = ["rank", "node", "importance"] + keys
    for name, scores in report.per_view_scores.items():
        cols.append(f"score.{name}")
        pos = mv.registry.index
        for r in rows:
            r[f"score.{name}"] = float(scores[pos[r["node"]]])
    write_table(ctx.out.path("rank.csv"), rows, cols)
    dump_json(rows, ctx.out.path("rank.json"))
    ctx.scores["structured_semi_nmf"] = dict(zip(mv.registry.ids, map(float, report.importance)))


def stage_subgraph(ctx: Context) -> None:
    mv = ctx.require_network()
    name = ctx.view_name(ctx.config.subgraph_view)
    sub = percentile_subgraph(ctx.require_result(), mv, name, ctx.config.q)
    tag = f"subgraph_{name}_q{ctx.config.q:g}"
    export_dot(mv.view(name), mv.registry, ctx.out.path(f"{tag}.dot"), sub.nodes)
    rows = [{"node": nd, "score": float(s)} for nd, s in zip(sub.nodes, sub.scores)]
    write_table(ctx.out.path(f"{tag}.csv"), rows, ["node", "score"])


def stage_baseline(ctx: Context) -> None:
    mv = ctx.require_network()
    name = ctx.view_name(ctx.config.baseline_view)
    view = mv.view(name)
    if ctx.config.baseline_method == "pagerank":
        results = [pagerank(view, ctx.config.damping)]
    else:
        results = list(hits(view))
    for res in results:
        if not res.converged:
            logger.warning("%s did not converge in %d iterations", res.method, res.iterations)
        ranks = competition_ranks(res.scores)
        order = sorted(range(mv.n), key=lambda i: (-res.scores[i], mv.registry.ids[i]))
        rows = [{"node": mv.registry.ids[i], "score": float(res.scores[i]), "rank": int(ranks[i])} for i in order]
        write_table(ctx.out.path(f"baseline_{res.method}_{name}.csv"), rows, ["node", "score", "rank"])
        ctx.scores[res.method] = dict(zip(mv.registry.ids, map(float, res.scores)))


def _read_table(path) -> pd.DataFrame:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    sep = "\t" if path.endswith((".tsv", ".tab")) else ","
    df = pd.read_csv(path, sep=sep, dtype={0: str})
    df = df.set_index(df.columns[0])
    df.index = df.index.astype(str)
    return df


def regression_frame(rc: RegressConfig) -> pd.DataFrame:
    if rc.outcome is None:
        raise ConfigError("regress needs an outcome file")
    frame = _read_table(rc.outcome)
    if rc.controls:
        controls = _read_table(rc.controls)
        frame = frame.join(controls.drop(columns=[c for c in controls.columns if c in frame.columns]), how="inner")
    return frame


def stage_regress(ctx: Context) -> None:
    rc = ctx.config.regress
    frame = regression_frame(rc)
    numeric = list(rc.numeric)
    categorical = list(rc.categorical)
    if not numeric and not categorical:
        for c in frame.columns:
            if c in (rc.outcome_column, rc.exclude_flag) or c in rc.fixed_effects:
                continue
            (numeric if pd.api.types.is_numeric_dtype(frame[c]) else categorical).append(c)
    exclude_ids = set(rc.exclude)
    if rc.exclude_flag:
        flag = frame[rc.exclude_flag].astype(str).str.lower().isin({"1", "true", "yes", "y"})
        exclude_ids |= set(frame.index[flag])
    data = assemble_dataset(frame, rc.outcome_column, numeric, categorical, rc.fixed_effects,
                            exclude=sorted(exclude_ids) or None)
    sources: dict[str, dict[str, float]] = {}
    for item in rc.influence:
        if item.startswith("@"):
            key = item[1:]
            if key not in ctx.scores:
                raise ConfigError(f"influence source {item} is not available in this run")
            sources[key] = ctx.scores[key]
        else:
            if not os.path.exists(item):
                raise FileNotFoundError(item)
            sources[os.path.splitext(os.path.basename(item))[0]] = read_scores(item)
    if not sources:
        sources = dict(ctx.scores)
    influence = {}
    for name, scores in sources.items():
        missing = [r for r in data.row_ids if r not in scores]
        if missing:
            raise ConfigError(f"influence {name!r} lacks scores for {missing[:5]}")
        influence[name] = pd.Series({r: scores[r] for r in data.row_ids})
    table = compare_models(data, influence)
    write_table(ctx.out.path("rmse.csv"), table, ["model", "rmse", "dispersion", "n", "coefficient", "standard_error"])
    fits = {"None": fit_quasipoisson(data).to_dict()}
    for name, series in influence.items():
        fits[name] = fit_quasipoisson(data.with_column(name, series)).to_dict()
    fits["_dataset"] = {"n": data.n, "dropped_missing": data.dropped_missing,
                        "dropped_excluded": data.dropped_excluded, "columns": data.columns}
    dump_json(fits, ctx.out.path("regression.json"))


STAGE_FUNCS = {
    "synth": stage_synth,
    "stats": stage_stats,
    "factorize": stage_factorize,
    "scree": stage_scree,
    "rank": stage_rank,
    "subgraph": stage_subgraph,
    "baseline": stage_baseline,
    "regress": stage_regress,
}


def run_pipeline(config: RunConfig, stages=None) -> dict:
    """Run ``stages`` (default ``config.stages``) in dependency order and write the manifest."""
    config.validate()
    requested = list(stages if stages is not None else config.stages)
    bad = [s for s in requested if s not in STAGES]
    if bad:
        raise ConfigError(f"unknown stages {bad}")
    order = [s for s in STAGES if s in requested]
    os.makedirs(config.out, exist_ok=True)
    config_snapshot = config.to_dict()
    ctx = Context(config, Outputs(config.out))
    status, error = "ok", None
    try:
        for stage in order:
            logger.info("stage %s", stage)
            STAGE_FUNCS[stage](ctx)
            ctx.out.commit()
    except Exception as exc:
        status, error = "failed", f"{stage}: {type(exc).__name__}: {exc}"
        raise
    finally:
        fc = config.factorization
        manifest = {
            "status": status,
            "error": error,
            "config_hash": sha256_json(config_snapshot),
            "config": config_snapshot,
            "stages": order,
            "seeds": {"master": config.seed, "restarts": derive_seeds(fc.seed, fc.restarts)},
            "versions": {"structnmf": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "pandas": pd.__version__},
            "files": {os.path.relpath(p, config.out): sha256_file(p) for p in sorted(ctx.out.files)},
            "partial_files": sorted(os.path.relpath(p, config.out) + ".partial" for p in ctx.out.pending
                                    if os.path.exists(p + ".partial")),
            "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        dump_json(manifest, os.path.join(config.out, "manifest.json"))
    return manifest
