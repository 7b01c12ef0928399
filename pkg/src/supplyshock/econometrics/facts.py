"""Descriptive statistics of firm-supplier networks.

Percentiles use numpy's default linear interpolation between order
statistics.  A (firm, supplier) link is *new* in the first period it
appears, counted only after a burn-in window of leading periods.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..model import DomainError
from .panel import TransactionPanel
from .regression import demean

logger = logging.getLogger(__name__)

K_PERCENTILES = (75, 90, 95, 99)
SHARE_PERCENTILES = (10, 25, 50, 75, 90)
LINK_CLASSES = ("all", "top", "new")
DEFAULT_BURN_IN = 2

# Estimates on the original customs data; documentation only.
REFERENCE_SURVIVAL = {"all": 0.404, "top": 0.513, "new": 0.274}
REFERENCE_GRANULAR_R2 = {50: 0.6284, 100: 0.8942, 200: 0.9634}


def _link_table(panel: TransactionPanel, burn_in: int) -> pd.DataFrame:
    """Firm-supplier-period values with top and new flags."""
    links = panel.links()
    periods = panel.periods
    total = links.groupby(["firm_id", "period"])["value"].transform("sum")
    links["share"] = links["value"] / total
    # ties go to the lowest supplier id
    order = links.sort_values(["firm_id", "period", "value", "supplier_id"],
                              ascending=[True, True, False, True], kind="mergesort")
    top_idx = order.groupby(["firm_id", "period"]).head(1).index
    links["top"] = False
    links.loc[top_idx, "top"] = True
    first = links.groupby(["firm_id", "supplier_id"])["period"].transform("min")
    links["after_burn_in"] = links["period"].isin(periods[burn_in:])
    links["new"] = (links["period"] == first) & links["after_burn_in"]
    return links


def _k_stats(K: pd.Series) -> dict:
    out = {"n_firms": int(K.size), "mean_K": float(K.mean()), "median_K": float(K.median())}
    for q in K_PERCENTILES:
        out[f"p{q}_K"] = float(np.percentile(K, q))
    return out


def _share_stats(top: pd.Series) -> dict:
    out = {"mean_top_share": float(top.mean())}
    for q in SHARE_PERCENTILES:
        out[f"p{q}_top_share"] = float(np.percentile(top, q))
    return out


def _new_stats(links: pd.DataFrame) -> dict:
    sub = links[links["after_burn_in"]]
    if sub.empty:
        return {"new_link_firm_share": float("nan"), "new_link_import_share": float("nan")}
    firm_new = sub.groupby(["firm_id", "period"])["new"].any()
    return {
        "new_link_firm_share": float(firm_new.mean()),
        "new_link_import_share": float(sub.loc[sub["new"], "value"].sum() / sub["value"].sum()),
    }


def stylized_facts(panel: TransactionPanel, burn_in: int = DEFAULT_BURN_IN) -> pd.DataFrame:
    """Suppliers per firm, top-supplier shares and new-link activity.

    One row per period plus a ``pooled`` row over all firm-period
    observations.  New-link columns are NaN inside the burn-in window.
    """
    if burn_in < 0:
        raise DomainError("burn_in must be >= 0")
    links = _link_table(panel, burn_in)
    rows = []
    groups = [(str(p), g) for p, g in links.groupby("period", sort=True)] + [("pooled", links)]
    for label, g in groups:
        per_firm = g.groupby(["firm_id", "period"])
        row = {"period": label}
        row.update(_k_stats(per_firm.size()))
        row.update(_share_stats(g.loc[g["top"], "share"]))
        row.update(_new_stats(g))
        rows.append(row)
    return pd.DataFrame(rows)


def _ols_constant(y: np.ndarray) -> float:
    X = np.ones((y.size, 1))
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return float(coef[0])


@dataclass
class SurvivalResult:
    horizon: int
    link_class: str
    probability: float
    n: int
    constant: float
    type_effect: float
    type_effect_fe: float
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("horizon", "link_class", "probability", "n",
                                              "constant", "type_effect", "type_effect_fe")}


def _survival_sample(panel: TransactionPanel, s: int, burn_in: int) -> pd.DataFrame:
    periods = panel.periods
    if s < 1:
        raise DomainError("horizon must be >= 1")
    if periods.size < s + 1:
        raise DomainError(f"need at least {s + 1} periods for horizon {s}")
    links = _link_table(panel, burn_in)
    active = set(zip(links["firm_id"], links["supplier_id"], links["period"]))
    pos = {p: i for i, p in enumerate(periods)}
    sample = links[links["period"].map(pos) + s <= periods.size - 1].copy()
    # survival: the link is active in every one of the next s periods
    alive = np.ones(len(sample), dtype=bool)
    for h in range(1, s + 1):
        nxt = sample["period"].map(lambda p: periods[pos[p] + h])
        alive &= np.fromiter((k in active for k in zip(sample["firm_id"], sample["supplier_id"], nxt)),
                             dtype=bool, count=len(sample))
    sample["survives"] = alive.astype(float)
    return sample


def _type_effect(sample: pd.DataFrame, flag: str, fixed_effects: bool) -> float:
    y = sample["survives"].to_numpy()
    d = sample[flag].to_numpy(dtype=float)
    if fixed_effects:
        groups = [pd.factorize(sample["firm_id"])[0], pd.factorize(sample["period"])[0]]
        Z, _ = demean(np.column_stack([y, d]), groups)
        y, d = Z[:, 0], Z[:, 1]
        X = d[:, None]
    else:
        X = np.column_stack([np.ones_like(d), d])
    if np.linalg.matrix_rank(X) < X.shape[1]:
        return float("nan")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return float(coef[-1])


def survival_stats(panel: TransactionPanel, horizon: int = 1, link_class: str = "all",
                   burn_in: int = DEFAULT_BURN_IN) -> SurvivalResult:
    """Probability that a link active at t stays active through t + horizon.

    ``probability`` is the raw frequency within the class and equals the
    constant of the no-FE indicator regression on that class.  For ``top``
    and ``new``, ``type_effect`` is the class dummy's coefficient in the
    regression over all links, without and with firm and period effects.
    """
    if link_class not in LINK_CLASSES:
        raise DomainError(f"link_class must be one of {LINK_CLASSES}")
    sample = _survival_sample(panel, horizon, burn_in)
    if link_class == "new":
        sample = sample[sample["after_burn_in"]]
    cls = sample if link_class == "all" else sample[sample[link_class]]
    if cls.empty:
        raise DomainError(f"no '{link_class}' links with {horizon} periods ahead")
    y = cls["survives"].to_numpy()
    prob = float(y.sum() / y.size)
    eff = eff_fe = float("nan")
    if link_class != "all":
        eff = _type_effect(sample, link_class, False)
        eff_fe = _type_effect(sample, link_class, True)
    return SurvivalResult(horizon, link_class, prob, int(y.size), _ols_constant(y), eff, eff_fe)


def persistence_stats(panel: TransactionPanel, horizon: int = 1) -> dict:
    """Probability that the top supplier at t is still the top supplier at t + horizon.

    ``unconditional`` uses every firm with a top supplier at t (and t +
    horizon inside the panel); ``conditional`` keeps only those whose link
    with that supplier is still active at t + horizon.
    """
    periods = panel.periods
    if periods.size < horizon + 1:
        raise DomainError(f"need at least {horizon + 1} periods")
    links = _link_table(panel, 0)
    pos = {p: i for i, p in enumerate(periods)}
    top = links[links["top"]][["firm_id", "supplier_id", "period"]]
    top = top[top["period"].map(pos) + horizon <= periods.size - 1].copy()
    top["ahead"] = top["period"].map(lambda p: periods[pos[p] + horizon])
    future_top = links[links["top"]][["firm_id", "period", "supplier_id"]].rename(
        columns={"period": "ahead", "supplier_id": "top_ahead"})
    future_link = links[["firm_id", "supplier_id", "period"]].rename(columns={"period": "ahead"})
    future_link["active_ahead"] = True
    m = top.merge(future_top, on=["firm_id", "ahead"], how="left")
    m = m.merge(future_link, on=["firm_id", "supplier_id", "ahead"], how="left")
    m["active_ahead"] = m["active_ahead"].notna()
    m["still_top"] = (m["top_ahead"] == m["supplier_id"]).astype(float)
    cond = m[m["active_ahead"]]
    return {
        "horizon": horizon,
        "unconditional": float(m["still_top"].mean()) if len(m) else float("nan"),
        "n_unconditional": int(len(m)),
        "conditional": float(cond["still_top"].mean()) if len(cond) else float("nan"),
        "n_conditional": int(len(cond)),
    }


@dataclass
class GranularResidual:
    series: pd.DataFrame      # period, gamma, aggregate_growth
    r2: float
    adj_r2: float
    degenerate: bool
    dropped_periods: list = field(default_factory=list)


def granular_residual(panel: TransactionPanel, K: int, Q: int) -> GranularResidual:
    """Size-weighted idiosyncratic growth of the K largest suppliers.

    Growth is the log change of a supplier's total sales across all firms;
    suppliers are ranked by lagged sales among those present in both
    periods, and the benchmark is the median growth of the top Q.
    """
    if not Q >= K >= 1:
        raise DomainError("need Q >= K >= 1")
    periods = panel.periods
    if periods.size < 3:
        raise DomainError("need at least 3 periods")
    sales = panel.data.groupby(["supplier_id", "period"])["value"].sum().unstack("period")
    Y = sales.sum(axis=0)
    rows, dropped = [], []
    for prev, cur in zip(periods[:-1], periods[1:]):
        both = sales[[prev, cur]].dropna()
        if len(both) < K:
            logger.info("period %s dropped: %d suppliers < K=%d", cur, len(both), K)
            dropped.append(cur)
            continue
        both = both.sort_values(prev, ascending=False, kind="mergesort")
        g = np.log(both[cur].to_numpy()) - np.log(both[prev].to_numpy())
        g_bar = float(np.median(g[:Q]))
        w = both[prev].to_numpy()[:K] / Y[prev]
        rows.append({"period": cur, "gamma": float(w @ (g[:K] - g_bar)),
                     "aggregate_growth": float(np.log(Y[cur]) - np.log(Y[prev]))})
    series = pd.DataFrame(rows, columns=["period", "gamma", "aggregate_growth"])
    n = len(series)
    x = series["gamma"].to_numpy()
    y = series["aggregate_growth"].to_numpy()
    if n < 3 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return GranularResidual(series, float("nan"), float("nan"), True, dropped)
    X = np.column_stack([np.ones(n), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    r2 = 1.0 - float(resid @ resid) / float(((y - y.mean()) ** 2).sum())
    adj = 1.0 - (1.0 - r2) * (n - 1) / (n - 2)
    return GranularResidual(series, r2, adj, False, dropped)
