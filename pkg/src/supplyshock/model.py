"""Static firm problem: CES demand, two-tier CES technology, export selection.

All closed forms accept numpy arrays where that makes sense so that the
population code can evaluate thousands of firms at once.  The scalar entry
points (``bundle_price``, ``solve_firm`` ...) validate their inputs and raise
``DomainError``; the array helpers prefixed with ``_`` assume valid input.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class DomainError(ValueError):
    """Input outside the domain of a model formula."""


@dataclass(frozen=True)
class ModelParams:
    rho: float = 5.0
    alpha: float = 2.0 / 3.0
    theta: float = 0.5
    varphi: float = 0.75
    tau_f: float = 1.5
    tau_d: float = 1.0
    w: float = 1.0
    F_e: float = 0.0049
    f_s: float = 0.0046
    mu: float = 0.6079
    beta: float = 0.96
    mu_z: float = 0.5
    sigma_z: float = 0.0267
    p_lo: float = 0.5
    p_hi: float = 4.4974
    P_d: float = 1.0
    Y_d: float = 1.0
    P_f: float = 1.0
    Y_f: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.rho > 1, "rho must exceed 1"),
            (0 <= self.alpha <= 1, "alpha must lie in [0, 1]"),
            (0 < self.theta < 1, "theta must lie in (0, 1)"),
            (0 < self.varphi < 1, "varphi must lie in (0, 1)"),
            (self.tau_f >= 1, "tau_f must be >= 1"),
            (self.tau_d > 0, "tau_d must be positive"),
            (self.w > 0, "w must be positive"),
            (self.F_e >= 0, "F_e must be >= 0"),
            (self.f_s >= 0, "f_s must be >= 0"),
            (self.mu > 0, "mu must be positive"),
            (0 <= self.beta < 1, "beta must lie in [0, 1)"),
            (self.sigma_z >= 0, "sigma_z must be >= 0"),
            (0 < self.p_lo <= self.p_hi, "need 0 < p_lo <= p_hi"),
            (min(self.P_d, self.Y_d, self.P_f, self.Y_f) > 0,
             "market indices must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise DomainError(msg)

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise KeyError(f"unknown ModelParams fields: {sorted(unknown)}")
        return cls(**data)

    def market(self, market: str) -> tuple[float, float, float]:
        """(tau, P, Y) for ``'domestic'`` or ``'foreign'``."""
        if market in ("domestic", "d"):
            return self.tau_d, self.P_d, self.Y_d
        if market in ("foreign", "f"):
            return self.tau_f, self.P_f, self.Y_f
        raise DomainError(f"unknown market {market!r}")


@dataclass
class Firm:
    id: int
    z: float
    supplier_prices: list[float] = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.supplier_prices)

    def validate(self, params: ModelParams | None = None) -> None:
        if self.z <= 0:
            raise DomainError("productivity must be positive")
        if self.K < 1:
            raise DomainError("a firm needs at least one supplier")
        if params is not None:
            lo, hi = params.p_lo, params.p_hi
            tol = 1e-12 * hi
            if any(p < lo - tol or p > hi + tol for p in self.supplier_prices):
                raise DomainError("supplier price outside [p_lo, p_hi]")

    def with_supplier(self, price: float) -> "Firm":
        return Firm(self.id, self.z, [*self.supplier_prices, price])


@dataclass
class LineOutcome:
    market: str
    active: bool
    price: float
    quantity: float
    labor: float
    bundle: float
    supplier_quantities: np.ndarray
    supplier_expenditures: np.ndarray
    gross_profit: float


@dataclass
class FirmOutcome:
    firm_id: int
    z: float
    K: int
    p_M: float
    C: float
    z_bar: float
    exports: bool
    domestic: LineOutcome
    foreign: LineOutcome
    total_profit: float
    supplier_prices: np.ndarray
    shares: np.ndarray

    @property
    def supplier_expenditures(self) -> np.ndarray:
        return self.domestic.supplier_expenditures + self.foreign.supplier_expenditures

    @property
    def import_value(self) -> float:
        return float(self.supplier_expenditures.sum())

    @property
    def import_quantity(self) -> float:
        return self.domestic.bundle + self.foreign.bundle

    @property
    def top_share(self) -> float:
        return float(self.shares.max())

    def to_record(self) -> dict:
        """Flat record with stable field names (JSON / CSV row)."""
        rec = {
            "firm_id": self.firm_id,
            "z": self.z,
            "K": self.K,
            "p_M": self.p_M,
            "C": self.C,
            "z_bar": self.z_bar,
            "exports": int(self.exports),
        }
        for line in (self.domestic, self.foreign):
            tag = "d" if line.market == "domestic" else "f"
            rec[f"price_{tag}"] = line.price
            rec[f"x_{tag}"] = line.quantity
            rec[f"L_{tag}"] = line.labor
            rec[f"M_{tag}"] = line.bundle
            rec[f"pi_{tag}"] = line.gross_profit
        rec["import_value"] = self.import_value
        rec["top_share"] = self.top_share
        rec["total_profit"] = self.total_profit
        return rec



def _variety_terms(prices, varphi: float, ref: float | None = None) -> np.ndarray:
    """(p_k/ref)^(varphi/(varphi-1)), evaluated in log space."""
    p = np.asarray(prices, dtype=float)
    ref = float(p.min()) if ref is None else ref
    return np.exp(varphi / (varphi - 1.0) * np.log(p / ref))


def bundle_price_from_index(index, varphi: float, ref: float):
    """Bundle price given the variety index sum_k (p_k/ref)^(varphi/(varphi-1))."""
    return ref * np.exp((varphi - 1.0) / varphi * np.log(index))


def bundle_price(supplier_prices: Sequence[float], varphi: float) -> float:
    """CES price index of the imported-input bundle."""
    p = np.asarray(supplier_prices, dtype=float)
    if p.size == 0:
        raise DomainError("empty supplier list")
    if np.any(p <= 0) or not np.all(np.isfinite(p)):
        raise DomainError("supplier prices must be positive and finite")
    if not 0 < varphi < 1:
        raise DomainError("varphi must lie in (0, 1)")
    ref = float(p.min())
    return float(bundle_price_from_index(_variety_terms(p, varphi, ref).sum(), varphi, ref))


def _unit_cost(w, p_M, alpha: float, theta: float):
    e = theta / (theta - 1.0)
    with np.errstate(divide="ignore"):
        la = np.log(alpha) / (1.0 - theta) if alpha > 0 else -np.inf
        lb = np.log1p(-alpha) / (1.0 - theta) if alpha < 1 else -np.inf
    log_sum = np.logaddexp(la + e * np.log(w), lb + e * np.log(p_M))
    return np.exp(log_sum / e)


def unit_cost(w: float, p_M: float, alpha: float, theta: float) -> float:
    """Unit cost of the labor / import-bundle CES tier."""
    if w <= 0 or p_M <= 0:
        raise DomainError("w and p_M must be positive")
    if not 0 <= alpha <= 1 or not 0 < theta < 1:
        raise DomainError("need alpha in [0, 1] and theta in (0, 1)")
    return float(_unit_cost(w, p_M, alpha, theta))


def input_demands(C: float, w: float, p_M: float, x_target: float,
                  params: ModelParams, supplier_prices: Sequence[float] | None = None):
    """Cost-minimizing (L, M, m_k) for first-tier output ``x_target``.

    ``x_target`` is the CES aggregate of labor and the bundle, i.e. sales
    divided by productivity.
    """
    if x_target < 0:
        raise DomainError("x_target must be >= 0")
    if C <= 0 or w <= 0 or p_M <= 0:
        raise DomainError("C, w, p_M must be positive")
    a, th = params.alpha, params.theta
    k = 1.0 / (1.0 - th)
    L = (a * C / w) ** k * x_target
    M = ((1.0 - a) * C / p_M) ** k * x_target
    if supplier_prices is None:
        return L, M, np.empty(0)
    p = np.asarray(supplier_prices, dtype=float)
    m = np.exp(np.log(p_M / p) / (1.0 - params.varphi)) * M
    return L, M, m


def first_tier_output(L, M, alpha: float, theta: float, z: float = 1.0):
    return z * (alpha * L ** theta + (1.0 - alpha) * M ** theta) ** (1.0 / theta)


def _markup(rho: float) -> float:
    return rho / (rho - 1.0)


def export_threshold(C: float, params: ModelParams) -> float:
    """Productivity at which export-line operating profit just covers w*F_e."""
    if C <= 0:
        raise DomainError("C must be positive")
    return float(_export_threshold(C, params))


def _export_threshold(C, params: ModelParams):
    r = params.rho
    if params.F_e == 0:
        return np.zeros_like(np.asarray(C, dtype=float))
    scale = (r ** r * params.w * params.F_e / (params.P_f ** r * params.Y_f)) ** (1.0 / (r - 1.0))
    return params.tau_f * np.asarray(C, dtype=float) / (r - 1.0) * scale


def _gross_profit(z, C, tau: float, P: float, Y: float, rho: float):
    mc = tau * np.asarray(C, dtype=float) / np.asarray(z, dtype=float)
    return np.exp((1.0 - rho) * np.log(mc)) * P ** rho * Y * _markup(rho) ** (-rho) / (rho - 1.0)


def line_profit(z: float, C: float, market: str, params: ModelParams):
    """Optimal (quantity, price, gross operating profit) on one production line."""
    if z <= 0 or C <= 0:
        raise DomainError("z and C must be positive")
    tau, P, Y = params.market(market)
    r = params.rho
    mc = tau * C / z
    price = _markup(r) * mc
    x = mc ** (-r) * P ** r * Y * _markup(r) ** (-r)
    return float(x), float(price), float(_gross_profit(z, C, tau, P, Y, r))


def firm_profit(z, C, params: ModelParams):
    """Total per-period profit with the export decision taken optimally.

    Array-friendly; exporting happens at ``z >= z_bar`` (ties export).
    """
    z = np.asarray(z, dtype=float)
    C = np.asarray(C, dtype=float)
    pi_d = _gross_profit(z, C, params.tau_d, params.P_d, params.Y_d, params.rho)
    pi_f = _gross_profit(z, C, params.tau_f, params.P_f, params.Y_f, params.rho)
    exports = z >= _export_threshold(C, params)
    return pi_d + np.where(exports, pi_f - params.w * params.F_e, 0.0)


def profit_from_index(z, index, params: ModelParams):
    """Total profit as a function of the variety index (see ``_variety_terms``)."""
    p_M = bundle_price_from_index(index, params.varphi, params.p_lo)
    C = _unit_cost(params.w, p_M, params.alpha, params.theta)
    return firm_profit(z, C, params)


def _line(market: str, active: bool, z: float, C: float, p_M: float,
          prices: np.ndarray, params: ModelParams) -> LineOutcome:
    K = prices.size
    if not active:
        zeros = np.zeros(K)
        return LineOutcome(market, False, 0.0, 0.0, 0.0, 0.0, zeros, zeros.copy(), 0.0)
    x, price, gross = line_profit(z, C, market, params)
    L, M, m = input_demands(C, params.w, p_M, x / z, params, prices)
    return LineOutcome(market, True, price, x, L, M, m, prices * m, gross)


def solve_firm(firm: Firm, params: ModelParams) -> FirmOutcome:
    """Solve the static allocation of one firm given its supplier set."""
    firm.validate()
    prices = np.asarray(firm.supplier_prices, dtype=float)
    p_M = bundle_price(prices, params.varphi)
    C = unit_cost(params.w, p_M, params.alpha, params.theta)
    z_bar = export_threshold(C, params)
    exports = bool(firm.z >= z_bar)
    dom = _line("domestic", True, firm.z, C, p_M, prices, params)
    fgn = _line("foreign", exports, firm.z, C, p_M, prices, params)
    total = dom.gross_profit + (fgn.gross_profit - params.w * params.F_e if exports else 0.0)
    return FirmOutcome(firm.id, float(firm.z), firm.K, p_M, C, z_bar, exports, dom, fgn,
                       total, prices, supplier_shares(prices, params.varphi))


def supplier_shares(supplier_prices: Sequence[float], varphi: float) -> np.ndarray:
    """Expenditure shares across suppliers (identical on both lines)."""
    t = _variety_terms(supplier_prices, varphi)
    return t / t.sum()


def lognormal_quantile(q: float, mu: float, sigma: float) -> float:
    from scipy.stats import norm

    return math.exp(mu + sigma * norm.ppf(q))


def solve_index(z, index, params: ModelParams) -> dict[str, np.ndarray]:
    """Vectorized static solution for firms described by (z, variety index).

    ``index`` is sum_k (p_k/p_lo)^(varphi/(varphi-1)).  Returns arrays keyed
    like ``FirmOutcome.to_record`` for the fields that do not need the
    individual supplier prices.
    """
    z = np.asarray(z, dtype=float)
    p_M = bundle_price_from_index(np.asarray(index, dtype=float), params.varphi, params.p_lo)
    C = _unit_cost(params.w, p_M, params.alpha, params.theta)
    z_bar = _export_threshold(C, params)
    exports = z >= z_bar
    r = params.rho
    k = 1.0 / (1.0 - params.theta)
    lab = (params.alpha * C / params.w) ** k
    bun = ((1.0 - params.alpha) * C / p_M) ** k
    out = {"p_M": p_M, "C": C, "z_bar": z_bar, "exports": exports}
    total = np.zeros_like(z)
    for tag in ("d", "f"):
        tau, P, Y = params.market(tag)
        mc = tau * C / z
        x = np.exp(-r * np.log(mc)) * P ** r * Y * _markup(r) ** (-r)
        gross = _gross_profit(z, C, tau, P, Y, r)
        if tag == "f":
            x = np.where(exports, x, 0.0)
            gross = np.where(exports, gross, 0.0)
        out[f"x_{tag}"] = x
        out[f"L_{tag}"] = lab * x / z
        out[f"M_{tag}"] = bun * x / z
        out[f"pi_{tag}"] = gross
        total = total + gross
    out["total_profit"] = total - np.where(exports, params.w * params.F_e, 0.0)
    out["import_quantity"] = out["M_d"] + out["M_f"]
    out["import_value"] = p_M * out["import_quantity"]
    return out
