"""Two-way (firm-time, supplier-time) fixed effects on price changes.

Each period is an independent problem: the effects are period specific, so
the design is block diagonal in time.  Within a period the firm-supplier
graph may split into several connected components; supplier effects are
only identified up to a constant per component, which is pinned by making
their record-weighted mean zero and moving the level into the firm effects.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from ..model import DomainError
from .panel import INSTANCE, PriceChangePanel

logger = logging.getLogger(__name__)

TOLERANCE = 1e-10
MAX_SWEEPS = 10_000


@dataclass
class FEEstimate:
    data: pd.DataFrame                 # records with fitted, residual, component
    firm_effects: pd.DataFrame         # firm_id, period, beta, component
    supplier_effects: pd.DataFrame     # supplier_id, period, gamma, component, n_records, identified
    components: pd.DataFrame           # per (period, component) normalization report
    definition: str
    mode: str = "two_way"
    sweeps: dict = field(default_factory=dict)
    converged: bool = True

    @property
    def residuals(self) -> np.ndarray:
        return self.data["residual"].to_numpy()

    def gamma(self, supplier_id, period) -> float:
        s = self.supplier_effects
        row = s[(s["supplier_id"] == supplier_id) & (s["period"] == period)]
        if row.empty:
            raise KeyError((supplier_id, period))
        return float(row["gamma"].iloc[0])

    def to_csv(self) -> str:
        from .panel import write_table
        return write_table(self.supplier_effects, "supplier_effects")


def _codes(values) -> tuple[np.ndarray, np.ndarray]:
    uniq, inv = np.unique(np.asarray(values), return_inverse=True)
    return uniq, inv.ravel()


def _components(fi, si, n_f, n_s) -> np.ndarray:
    """Component label per record from the bipartite firm-supplier graph."""
    n = fi.size
    graph = sparse.coo_matrix((np.ones(n), (fi, n_f + si)), shape=(n_f + n_s, n_f + n_s))
    _, labels = connected_components(graph, directed=False)
    comp = labels[fi]
    # relabel in order of first appearance so labels do not depend on scipy internals
    _, first = np.unique(comp, return_index=True)
    order = np.argsort(np.argsort(first))
    return order[np.searchsorted(np.unique(comp), comp)]


def alternating_projections(y, fi, si, n_f, n_s, tol=TOLERANCE, max_sweeps=MAX_SWEEPS):
    """Least-squares firm and supplier effects by alternating group demeaning.

    Returns (a, g, sweeps, converged) with fitted values a[fi] + g[si].
    """
    cnt_f = np.bincount(fi, minlength=n_f).astype(float)
    cnt_s = np.bincount(si, minlength=n_s).astype(float)
    a = np.zeros(n_f)
    g = np.zeros(n_s)
    resid = y.copy()
    scale = max(1.0, float(np.abs(y).max()) if y.size else 1.0)
    for sweep in range(1, max_sweeps + 1):
        a = np.bincount(fi, y - g[si], minlength=n_f) / cnt_f
        g = np.bincount(si, y - a[fi], minlength=n_s) / cnt_s
        new = y - a[fi] - g[si]
        change = float(np.abs(new - resid).max()) / scale
        resid = new
        if change < tol:
            return a, g, sweep, True
    return a, g, max_sweeps, False


def dense_solve(y, fi, si, n_f, n_s):
    """Minimum-norm least squares on explicit indicator blocks (small fixtures)."""
    n = y.size
    X = np.zeros((n, n_f + n_s))
    X[np.arange(n), fi] = 1.0
    X[np.arange(n), n_f + si] = 1.0
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef[:n_f], coef[n_f:]


def _normalize(a, g, fi, si, comp, n_comp):
    """Record-weighted mean-zero supplier effects within each component."""
    comp_f = np.zeros(a.size, dtype=int)
    comp_s = np.zeros(g.size, dtype=int)
    comp_f[fi] = comp
    comp_s[si] = comp
    shift = np.bincount(comp, g[si], minlength=n_comp) / np.bincount(comp, minlength=n_comp)
    return a + shift[comp_f], g - shift[comp_s], comp_f, comp_s


def fe_extract(changes: PriceChangePanel, mode: str = "two_way", solver: str = "projections",
               tol: float = TOLERANCE, max_sweeps: int = MAX_SWEEPS) -> FEEstimate:
    """Firm-time and supplier-time effects of instance price changes.

    ``mode='firm_only'`` fits firm-time effects alone (a diagnostic; supplier
    effects are then absent).  ``solver='dense'`` solves the normal equations
    directly and is meant for cross-checking on small fixtures.
    """
    if mode not in ("two_way", "firm_only"):
        raise DomainError("mode must be 'two_way' or 'firm_only'")
    if solver not in ("projections", "dense"):
        raise DomainError("solver must be 'projections' or 'dense'")
    df = changes.data
    if len(df) == 0:
        raise DomainError("no price-change records")
    df = df.sort_values(["period"] + INSTANCE, kind="mergesort").reset_index(drop=True)
    fitted = np.empty(len(df))
    comp_all = np.zeros(len(df), dtype=int)
    firm_rows, supp_rows, comp_rows, sweeps = [], [], [], {}
    converged = True
    for period, idx in df.groupby("period", sort=True).indices.items():
        part = df.iloc[idx]
        y = part["delta"].to_numpy(dtype=float)
        firms, fi = _codes(part["firm_id"])
        supps, si = _codes(part["supplier_id"])
        n_f, n_s = firms.size, supps.size
        if mode == "firm_only":
            a = np.bincount(fi, y, minlength=n_f) / np.bincount(fi, minlength=n_f)
            fitted[idx] = a[fi]
            firm_rows.append(pd.DataFrame({"firm_id": firms, "period": period, "beta": a, "component": -1}))
            continue
        comp = _components(fi, si, n_f, n_s)
        n_comp = int(comp.max()) + 1
        if solver == "dense":
            a, g = dense_solve(y, fi, si, n_f, n_s)
            sweeps[period] = 0
        else:
            a, g, k, ok = alternating_projections(y, fi, si, n_f, n_s, tol, max_sweeps)
            sweeps[period] = k
            if not ok:
                converged = False
                logger.warning("period %s: projections stopped after %d sweeps", period, k)
        a, g, comp_f, comp_s = _normalize(a, g, fi, si, comp, n_comp)
        fitted[idx] = a[fi] + g[si]
        comp_all[idx] = comp
        n_rec_s = np.bincount(si, minlength=n_s)
        rec = np.bincount(comp, minlength=n_comp)
        nf = np.bincount(comp_f, minlength=n_comp)
        ns = np.bincount(comp_s, minlength=n_comp)
        firm_rows.append(pd.DataFrame({"firm_id": firms, "period": period, "beta": a, "component": comp_f}))
        supp_rows.append(pd.DataFrame({
            "supplier_id": supps, "period": period, "gamma": g, "component": comp_s,
            "n_records": n_rec_s, "identified": ns[comp_s] > 1,
        }))
        comp_rows.append(pd.DataFrame({
            "period": period, "component": np.arange(n_comp), "n_firms": nf, "n_suppliers": ns,
            "n_records": rec, "singleton": (nf == 1) & (ns == 1) & (rec == 1),
            "pinned": "record-weighted mean of supplier effects = 0",
        }))
    n_single = int(sum(c["singleton"].sum() for c in comp_rows))
    if n_single:
        logger.info("%d singleton components; their supplier effects are set to 0", n_single)
    out = df.assign(fitted=fitted, residual=df["delta"].to_numpy() - fitted, component=comp_all)
    supp_cols = ["supplier_id", "period", "gamma", "component", "n_records", "identified"]
    comp_cols = ["period", "component", "n_firms", "n_suppliers", "n_records", "singleton", "pinned"]
    return FEEstimate(
        data=out,
        firm_effects=pd.concat(firm_rows, ignore_index=True),
        supplier_effects=(pd.concat(supp_rows, ignore_index=True) if supp_rows
                          else pd.DataFrame(columns=supp_cols)),
        components=(pd.concat(comp_rows, ignore_index=True) if comp_rows
                    else pd.DataFrame(columns=comp_cols)),
        definition=changes.definition,
        mode=mode,
        sweeps=sweeps,
        converged=converged,
    )


def align_to_truth(estimate: FEEstimate, truth: pd.DataFrame) -> pd.DataFrame:
    """Estimated and planted supplier effects after removing each component's level.

    ``truth`` has columns supplier_id, period, gamma.  The planted values are
    re-normalized with the estimator's own per-component rule so the two
    columns are directly comparable.
    """
    est = estimate.supplier_effects
    recs = estimate.data[["period", "supplier_id", "component"]]
    merged = recs.merge(truth.rename(columns={"gamma": "planted"}), on=["supplier_id", "period"], how="left")
    if merged["planted"].isna().any():
        raise DomainError("truth lacks some estimated supplier effects")
    level = merged.groupby(["period", "component"])["planted"].mean().rename("level").reset_index()
    out = est.merge(truth.rename(columns={"gamma": "planted"}), on=["supplier_id", "period"])
    out = out.merge(level, on=["period", "component"])
    out["planted_normalized"] = out["planted"] - out["level"]
    out["error"] = out["gamma"] - out["planted_normalized"]
    return out
