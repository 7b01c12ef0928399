"""Panel regressions with absorbed fixed effects and two-way clustered errors."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..model import DomainError
from .panel import write_table

logger = logging.getLogger(__name__)

TOLERANCE = 1e-10
MAX_SWEEPS = 10_000


class CollinearityWarning(UserWarning):
    pass


@dataclass
class RegressionSpec:
    """What to regress on what.

    ``units`` identify the panel unit along which lags are taken;
    ``fixed_effects`` lists groups of columns, each group one absorbed
    dimension (e.g. ``[["firm_id", "supplier_id"], ["period"]]``).
    ``subset`` is an optional ``DataFrame.query`` string applied before lags
    are formed.
    """

    outcome: str = "y"
    shock: str = "shock"
    units: list = field(default_factory=lambda: ["firm_id"])
    fixed_effects: list = field(default_factory=lambda: [["firm_id"], ["period"]])
    outcome_lags: tuple = (1, 2)
    shock_lags: tuple = (1, 2)
    covariates: list = field(default_factory=list)
    cluster: tuple = ("firm_id", "country_id")
    subset: str | None = None

    def __post_init__(self):
        if len(self.cluster) not in (1, 2):
            raise DomainError("one or two cluster dimensions")
        if any(l < 1 for l in tuple(self.outcome_lags) + tuple(self.shock_lags)):
            raise DomainError("lags must be >= 1")


@dataclass
class RegressionResult:
    coef: pd.Series
    vcov: pd.DataFrame
    n_obs: int
    fe_dims: list
    r2_within: float
    dropped: list = field(default_factory=list)
    n_clusters: dict = field(default_factory=dict)
    sweeps: int = 0

    @property
    def se(self) -> pd.Series:
        return pd.Series(np.sqrt(np.diag(self.vcov.to_numpy())), index=self.coef.index)

    def table(self) -> pd.DataFrame:
        se = self.se
        return pd.DataFrame({"term": self.coef.index, "estimate": self.coef.to_numpy(),
                             "std_error": se.to_numpy(), "t_stat": (self.coef / se).to_numpy()})

    def to_csv(self) -> str:
        return write_table(self.table(), "regression")


def demean(columns: np.ndarray, groups: list[np.ndarray], tol=TOLERANCE, max_sweeps=MAX_SWEEPS):
    """Project out group means for several dimensions by alternating projections."""
    X = np.array(columns, dtype=float, copy=True)
    if not groups:
        return X, 0
    counts = [np.bincount(g).astype(float) for g in groups]
    scale = np.maximum(1.0, np.abs(X).max(axis=0))
    for sweep in range(1, max_sweeps + 1):
        before = X.copy()
        for g, c in zip(groups, counts):
            means = np.vstack([np.bincount(g, X[:, j], minlength=c.size) for j in range(X.shape[1])]).T / c[:, None]
            X -= means[g]
        if len(groups) == 1 or np.max(np.abs(X - before) / scale) < tol:
            return X, sweep
    logger.warning("demeaning stopped after %d sweeps", max_sweeps)
    return X, max_sweeps


def _drop_collinear(X: np.ndarray, names: list[str], tol=1e-9):
    keep = []
    for j in range(X.shape[1]):
        trial = keep + [j]
        col = X[:, j]
        if np.linalg.norm(col) <= tol * max(1.0, np.sqrt(len(col))):
            continue
        if np.linalg.matrix_rank(X[:, trial], tol=tol * np.linalg.norm(X[:, trial], 2)) == len(trial):
            keep.append(j)
    dropped = [names[j] for j in range(len(names)) if j not in keep]
    if dropped:
        warnings.warn(f"collinear regressors dropped: {dropped}", CollinearityWarning, stacklevel=3)
    return keep, dropped


def cluster_meat(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    _, inv = np.unique(labels, return_inverse=True)
    sums = np.zeros((inv.max() + 1, scores.shape[1]))
    np.add.at(sums, inv.ravel(), scores)
    return sums.T @ sums


def _psd_floor(V: np.ndarray) -> np.ndarray:
    V = 0.5 * (V + V.T)
    vals, vecs = np.linalg.eigh(V)
    return (vecs * np.maximum(vals, 0.0)) @ vecs.T


def twoway_vcov(X: np.ndarray, resid: np.ndarray, clusters: list[np.ndarray]) -> tuple[np.ndarray, dict]:
    """Cameron-Gelbach-Miller variance: A + B - (A and B), scaled by (N-1)/(N-k)."""
    n, k = X.shape
    bread = np.linalg.inv(X.T @ X)
    scores = X * resid[:, None]
    corr = (n - 1) / (n - k)
    if len(clusters) == 1:
        meat = cluster_meat(scores, clusters[0])
        counts = {"dim0": int(np.unique(clusters[0]).size)}
    else:
        a, b = clusters
        _, ia = np.unique(a, return_inverse=True)
        _, ib = np.unique(b, return_inverse=True)
        both = ia.ravel().astype(np.int64) * (ib.max() + 1) + ib.ravel()
        meat = cluster_meat(scores, a) + cluster_meat(scores, b) - cluster_meat(scores, both)
        counts = {"dim0": int(ia.max() + 1), "dim1": int(ib.max() + 1),
                  "intersection": int(np.unique(both).size)}
    V = corr * bread @ meat @ bread
    return _psd_floor(V), counts


def add_lags(df: pd.DataFrame, units: list[str], column: str, lags, name: str) -> list[str]:
    names = []
    for l in lags:
        lagged = df[units + ["period", column]].copy()
        lagged["period"] = lagged["period"] + l
        col = f"{name}_lag{l}"
        df[col] = df[units + ["period"]].merge(
            lagged.rename(columns={column: col}), on=units + ["period"], how="left")[col].to_numpy()
        names.append(col)
    return names


def panel_regress(outcome_panel: pd.DataFrame, shock_series, spec: RegressionSpec = RegressionSpec()
                  ) -> RegressionResult:
    """OLS of the outcome on the shock, lags and covariates after absorbing FEs.

    ``shock_series`` is a ShockSeries or a DataFrame with firm_id, period and
    the shock column; it is merged on (firm_id, period) unless the outcome
    panel already carries the shock column.
    """
    df = outcome_panel.copy()
    if spec.shock not in df:
        shocks = shock_series.data if hasattr(shock_series, "data") else shock_series
        df = df.merge(shocks[["firm_id", "period", spec.shock]], on=["firm_id", "period"], how="left")
    if spec.subset:
        df = df.query(spec.subset).copy()
    if df.duplicated(spec.units + ["period"]).any():
        raise DomainError("units do not identify rows uniquely within a period")
    df = df.reset_index(drop=True)
    regs = [spec.shock]
    regs += add_lags(df, spec.units, spec.shock, spec.shock_lags, spec.shock)
    regs += add_lags(df, spec.units, spec.outcome, spec.outcome_lags, spec.outcome)
    regs += list(spec.covariates)
    needed = [spec.outcome] + regs + list(spec.cluster)
    df = df.dropna(subset=needed).reset_index(drop=True)
    if len(df) == 0:
        raise DomainError("no complete observations")
    fe_dims = [list(c) if isinstance(c, (list, tuple)) else [c] for c in spec.fixed_effects]
    groups = [df.groupby(cols, sort=True).ngroup().to_numpy() for cols in fe_dims]
    raw = df[[spec.outcome] + regs].to_numpy(dtype=float)
    if not groups:
        raw = np.column_stack([raw, np.ones(len(df))])
        regs = regs + ["const"]
    Z, sweeps = demean(raw, groups)
    y, X = Z[:, 0], Z[:, 1:]
    keep, dropped = _drop_collinear(X, regs)
    X = X[:, keep]
    names = [regs[j] for j in keep]
    if len(df) <= len(names):
        raise DomainError("not enough observations for the regressors")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    clusters = [df[c].to_numpy() for c in spec.cluster]
    V, counts = twoway_vcov(X, resid, clusters)
    if groups:
        tss = float(y @ y)
    else:
        tss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / tss if tss > 0 else float("nan")
    return RegressionResult(
        coef=pd.Series(beta, index=names),
        vcov=pd.DataFrame(V, index=names, columns=names),
        n_obs=len(df),
        fe_dims=fe_dims,
        r2_within=r2,
        dropped=dropped,
        n_clusters=counts,
        sweeps=sweeps,
    )
