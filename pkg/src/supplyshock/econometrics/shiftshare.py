"""Firm-level supplier shocks: lagged expenditure shares times supplier effects."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..model import DomainError
from .fixed_effects import FEEstimate
from .panel import TransactionPanel, write_table

# Pooled standard deviations of the shock reported for the original customs
# data; not reproducible from synthetic panels, kept for documentation.
REFERENCE_POOLED_SD = {"log": 0.16882, "pct": 0.084716}


@dataclass
class ShockSeries:
    data: pd.DataFrame       # firm_id, period, shock, coverage, n_suppliers
    weights: pd.DataFrame    # firm_id, supplier_id, period (the share's own period), omega
    definition: str

    def describe(self) -> pd.DataFrame:
        """Observations, mean and standard deviation (in percent) per period and pooled."""
        rows = []
        for period, grp in self.data.groupby("period", sort=True):
            rows.append(_stats(str(period), grp["shock"]))
        rows.append(_stats("pooled", self.data["shock"]))
        return pd.DataFrame(rows, columns=["period", "n", "mean_pct", "sd_pct"])

    def to_csv(self) -> str:
        return write_table(self.data, "shock_series")


def _stats(label, s: pd.Series) -> dict:
    sd = float(s.std(ddof=1)) if len(s) > 1 else float("nan")
    return {"period": label, "n": int(len(s)), "mean_pct": 100.0 * float(s.mean()), "sd_pct": 100.0 * sd}


def expenditure_shares(panel: TransactionPanel) -> pd.DataFrame:
    """Supplier shares of each firm's total imports, per period."""
    links = panel.links()
    total = links.groupby(["firm_id", "period"])["value"].transform("sum")
    return links.assign(omega=links["value"] / total)[["firm_id", "supplier_id", "period", "omega"]]


def build_shock(estimate: FEEstimate, panel: TransactionPanel, definition: str | None = None) -> ShockSeries:
    """shock_{i,t} = sum over s of omega_{i,s,t-1} * gamma_{s,t}.

    Only suppliers with an estimated effect at t enter the sum; ``coverage``
    records the share of t-1 imports they represent.  Firms absent at t-1,
    or whose t-1 suppliers all lack an effect at t, get no row.
    """
    if estimate.mode != "two_way":
        raise DomainError("build_shock needs supplier effects (two-way estimate)")
    definition = definition or estimate.definition
    if definition != estimate.definition:
        raise DomainError(f"estimate was built on '{estimate.definition}' changes, not '{definition}'")
    w = expenditure_shares(panel)
    lagged = w.assign(period=w["period"] + 1)
    gam = estimate.supplier_effects[["supplier_id", "period", "gamma"]]
    m = lagged.merge(gam, on=["supplier_id", "period"], how="inner")
    m["contribution"] = m["omega"] * m["gamma"]
    out = (m.groupby(["firm_id", "period"], sort=True)
            .agg(shock=("contribution", "sum"), coverage=("omega", "sum"), n_suppliers=("gamma", "size"))
            .reset_index())
    return ShockSeries(out, w, definition)


def shock_from_weights(omega, gamma) -> float:
    """Single-firm helper: the weighted sum for aligned share and effect vectors."""
    omega = np.asarray(omega, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if omega.shape != gamma.shape:
        raise DomainError("omega and gamma must align")
    return float(omega @ gamma)
