"""Quasi-Poisson regression of an external count outcome on influence scores.

The mean model is ``E[y] = exp(X beta)`` and the variance ``rho * E[y]``.
Point estimates are the Poisson maximum-likelihood estimates; ``rho`` is
the Pearson statistic over residual degrees of freedom, floored at 1, and
standard errors are the Poisson Fisher errors times ``sqrt(rho)``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

__all__ = [
    "GlmError",
    "RankDeficientError",
    "RegressionDataset",
    "GlmFit",
    "assemble_dataset",
    "check_full_rank",
    "fit_poisson",
    "fit_quasipoisson",
    "compare_models",
]

COEF_BLOWUP = 30.0


class GlmError(RuntimeError):
    """IRLS diverged or produced non-finite working weights."""


class RankDeficientError(ValueError):
    def __init__(self, collinear: Sequence[str]):
        self.collinear = list(collinear)
        super().__init__(f"design matrix is rank deficient; collinear columns: {self.collinear}")


@dataclass
class RegressionDataset:
    outcome: np.ndarray
    design: np.ndarray
    columns: list[str]
    row_ids: list[str]
    dropped_missing: int = 0
    dropped_excluded: int = 0

    def __post_init__(self):
        self.outcome = np.asarray(self.outcome, dtype=float)
        self.design = np.asarray(self.design, dtype=float)
        if self.design.ndim != 2 or self.design.shape[0] != len(self.outcome):
            raise ValueError("design must have one row per outcome")
        if self.design.shape[1] != len(self.columns):
            raise ValueError("one column name per design column is required")
        if len(self.row_ids) != len(self.outcome):
            raise ValueError("one row id per outcome is required")
        if np.any(~np.isfinite(self.design)) or np.any(~np.isfinite(self.outcome)):
            raise ValueError("dataset contains missing or non-finite values")
        if np.any(self.outcome < 0):
            raise ValueError("outcome counts must be nonnegative")

    @property
    def n(self) -> int:
        return len(self.outcome)

    @property
    def p(self) -> int:
        return self.design.shape[1]

    def with_column(self, name: str, values) -> "RegressionDataset":
        values = _align(values, self.row_ids)
        return RegressionDataset(self.outcome, np.column_stack([self.design, values]),
                                 self.columns + [name], self.row_ids,
                                 self.dropped_missing, self.dropped_excluded)

    def without_rows(self, ids) -> "RegressionDataset":
        drop = set(ids)
        keep = np.array([r not in drop for r in self.row_ids])
        return RegressionDataset(self.outcome[keep], self.design[keep], list(self.columns),
                                 [r for r, k in zip(self.row_ids, keep) if k],
                                 self.dropped_missing, self.dropped_excluded + int((~keep).sum()))


def _align(values, row_ids) -> np.ndarray:
    if isinstance(values, pd.Series):
        missing = [r for r in row_ids if r not in values.index]
        if missing:
            raise ValueError(f"score missing for rows {missing[:10]}")
        return values.loc[list(row_ids)].to_numpy(dtype=float)
    if isinstance(values, Mapping):
        return np.array([float(values[r]) for r in row_ids])
    arr = np.asarray(values, dtype=float)
    if arr.shape != (len(row_ids),):
        raise ValueError(f"expected {len(row_ids)} values, got shape {arr.shape}")
    return arr


def check_full_rank(design: np.ndarray, columns: Sequence[str]) -> None:
    """Raise :class:`RankDeficientError` naming columns spanned by earlier ones."""
    X = np.asarray(design, dtype=float)
    if np.linalg.matrix_rank(X) == X.shape[1]:
        return
    basis = np.zeros((X.shape[0], 0))
    collinear = []
    for j in range(X.shape[1]):
        trial = np.column_stack([basis, X[:, j]])
        if np.linalg.matrix_rank(trial) > basis.shape[1]:
            basis = trial
        else:
            collinear.append(columns[j])
    raise RankDeficientError(collinear)


def _dummies(col: pd.Series, name: str) -> tuple[np.ndarray, list[str]]:
    counts = col.value_counts()
    # most frequent level is the reference; ties go to the lexicographically first level
    top = counts.max()
    reference = sorted(str(l) for l in counts.index[counts == top])[0]
    levels = sorted(str(l) for l in counts.index if str(l) != reference)
    as_str = col.astype(str)
    cols = [(as_str == lvl).to_numpy(dtype=float) for lvl in levels]
    return (np.column_stack(cols) if cols else np.zeros((len(col), 0))), [f"{name}[{lvl}]" for lvl in levels]


def assemble_dataset(
    frame: pd.DataFrame,
    outcome: str,
    numeric: Sequence[str] = (),
    categorical: Sequence[str] = (),
    fixed_effects: Sequence[str] = (),
    id_column: str | None = None,
    exclude: Callable[[pd.Series], bool] | Sequence[str] | None = None,
    intercept: bool = True,
) -> RegressionDataset:
    """Build an intercept + controls design from a table.

    Categorical controls and fixed effects are dummy coded against their most
    frequent level. Rows with any missing value in the used columns are
    dropped and counted. ``exclude`` is either a row predicate (for example,
    flagging organization accounts) or a list of ids.
    """
    df = frame.copy()
    if id_column is not None:
        df = df.set_index(id_column)
    df.index = df.index.astype(str)
    excluded = 0
    if exclude is not None:
        if callable(exclude):
            mask = df.apply(exclude, axis=1).astype(bool)
        else:
            mask = df.index.isin([str(e) for e in exclude])
        excluded = int(np.sum(mask))
        df = df[~np.asarray(mask)]
    used = [outcome, *numeric, *categorical, *fixed_effects]
    missing_cols = [c for c in used if c not in df.columns]
    if missing_cols:
        raise KeyError(f"columns not found: {missing_cols}")
    before = len(df)
    df = df.dropna(subset=used)
    dropped = before - len(df)
    if dropped:
        logger.warning("dropped %d row(s) with missing covariates", dropped)

    blocks, names = [], []
    if intercept:
        blocks.append(np.ones((len(df), 1)))
        names.append("intercept")
    for c in numeric:
        blocks.append(pd.to_numeric(df[c]).to_numpy(dtype=float)[:, None])
        names.append(c)
    for c in [*categorical, *fixed_effects]:
        block, labels = _dummies(df[c], c)
        blocks.append(block)
        names.extend(labels)
    X = np.column_stack(blocks) if blocks else np.zeros((len(df), 0))
    check_full_rank(X, names)
    y = pd.to_numeric(df[outcome]).to_numpy(dtype=float)
    return RegressionDataset(y, X, names, list(df.index), dropped, excluded)


@dataclass
class GlmFit:
    columns: list[str]
    coefficients: np.ndarray
    standard_errors: np.ndarray
    dispersion: float
    dispersion_raw: float
    fitted_means: np.ndarray
    deviance: float
    pearson_chi2: float
    rmse: float
    converged: bool
    iterations: int
    dispersion_floored: bool = False
    separation_warning: bool = False
    row_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "columns": self.columns,
            "coefficients": dict(zip(self.columns, map(float, self.coefficients))),
            "standard_errors": dict(zip(self.columns, map(float, self.standard_errors))),
            "dispersion": self.dispersion,
            "dispersion_raw": self.dispersion_raw,
            "dispersion_floored": self.dispersion_floored,
            "deviance": self.deviance,
            "pearson_chi2": self.pearson_chi2,
            "rmse": self.rmse,
            "converged": self.converged,
            "iterations": self.iterations,
            "separation_warning": self.separation_warning,
            "n": len(self.fitted_means),
        }


def _poisson_deviance(y, mu):
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(term - (y - mu)))


def _irls(y, X, tol, max_iters):
    n, p = X.shape
    mu = y + 0.5 * (y.mean() if y.mean() > 0 else 1.0)
    eta = np.log(mu)
    beta = np.zeros(p)
    dev = _poisson_deviance(y, mu)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        w = mu
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise GlmError(f"non-finite or nonpositive working weights at iteration {it}")
        z = eta + (y - mu) / mu
        sw = np.sqrt(w)
        beta_new, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        eta = X @ beta_new
        if not np.all(np.isfinite(eta)) or np.max(eta) > 700:
            raise GlmError(f"IRLS diverged at iteration {it}")
        mu = np.exp(eta)
        dev_new = _poisson_deviance(y, mu)
        step = np.max(np.abs(beta_new - beta)) if it > 1 else np.inf
        beta = beta_new
        if abs(dev_new - dev) <= tol * (abs(dev_new) + 0.1) and step <= max(tol, 1e-8) * (1 + np.max(np.abs(beta))):
            dev = dev_new
            converged = True
            break
        dev = dev_new
    return beta, mu, dev, converged, it


def _fit(data: RegressionDataset, tol: float, max_iters: int, quasi: bool) -> GlmFit:
    if data.n <= data.p:
        raise ValueError(f"need more rows than columns (n={data.n}, p={data.p})")
    check_full_rank(data.design, data.columns)
    y, X = data.outcome, data.design
    beta, mu, dev, converged, it = _irls(y, X, tol, max_iters)
    if not converged:
        warnings.warn(f"IRLS did not converge in {max_iters} iterations", RuntimeWarning, stacklevel=3)
    pearson = float(np.sum((y - mu) ** 2 / mu))
    raw = pearson / (data.n - data.p)
    rho = max(raw, 1.0) if quasi else 1.0
    cov = np.linalg.inv(X.T @ (X * mu[:, None]))
    se = np.sqrt(np.diag(cov) * rho)
    blowup = bool(np.any(np.abs(beta) > COEF_BLOWUP))
    if blowup:
        warnings.warn("coefficient magnitude above 30; possible separation", RuntimeWarning, stacklevel=3)
    return GlmFit(
        columns=list(data.columns), coefficients=beta, standard_errors=se,
        dispersion=rho, dispersion_raw=raw, fitted_means=mu, deviance=dev,
        pearson_chi2=pearson, rmse=float(np.sqrt(np.mean((y - mu) ** 2))),
        converged=converged, iterations=it, dispersion_floored=quasi and raw < 1.0,
        separation_warning=blowup, row_ids=list(data.row_ids),
    )


def fit_poisson(data: RegressionDataset, tol: float = 1e-10, max_iters: int = 100) -> GlmFit:
    """Plain Poisson log-link fit (dispersion fixed at 1)."""
    return _fit(data, tol, max_iters, quasi=False)


def fit_quasipoisson(data: RegressionDataset, tol: float = 1e-10, max_iters: int = 100) -> GlmFit:
    return _fit(data, tol, max_iters, quasi=True)


def compare_models(data: RegressionDataset, influence_columns: Mapping[str, object],
                   exclude_rows: Sequence[str] = (), tol: float = 1e-10) -> list[dict]:
    """RMSE of the controls-only model ("None") and of controls plus each score.

    ``data`` carries the controls; each influence score is added on its own.
    """
    influence_columns = {
        name: pd.Series(_align(values, data.row_ids), index=data.row_ids)
        for name, values in influence_columns.items()
    }
    if exclude_rows:
        data = data.without_rows(exclude_rows)
    rows = []
    base = fit_quasipoisson(data, tol=tol)
    rows.append({"model": "None", "rmse": base.rmse, "dispersion": base.dispersion, "n": data.n})
    for name, values in influence_columns.items():
        fitted = fit_quasipoisson(data.with_column(name, values), tol=tol)
        j = fitted.columns.index(name)
        rows.append({
            "model": name, "rmse": fitted.rmse, "dispersion": fitted.dispersion, "n": data.n,
            "coefficient": float(fitted.coefficients[j]), "standard_error": float(fitted.standard_errors[j]),
        })
    return rows
