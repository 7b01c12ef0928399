"""Sequential search for foreign suppliers.

A firm adds one supplier per period while the discounted expected gain of
one more draw from Uniform[p_lo, p_hi] covers the search fixed cost.  The
expectation is a Gauss-Legendre integral; the integrand has a kink where
the new draw pushes the firm over the export threshold, so the interval is
split there and each piece gets its own rule.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .model import (
    DomainError,
    Firm,
    ModelParams,
    _export_threshold,
    _variety_terms,
    profit_from_index,
)


@dataclass(frozen=True)
class SearchConfig:
    quadrature_nodes: int = 64
    max_rounds: int = 512
    rng_seed: int = 0

    def __post_init__(self):
        if self.quadrature_nodes < 8:
            raise DomainError("quadrature_nodes must be >= 8")
        if self.max_rounds < 1:
            raise DomainError("max_rounds must be >= 1")


@dataclass
class SearchRound:
    K: int
    payoff: float
    fixed_cost: float
    searched: bool
    drawn_price: float | None = None


@dataclass
class SearchTrace:
    firm_id: int
    z: float
    rounds: list[SearchRound] = field(default_factory=list)
    supplier_prices: list[float] = field(default_factory=list)
    hit_max_rounds: bool = False

    @property
    def K(self) -> int:
        return len(self.supplier_prices)

    def to_jsonl(self) -> str:
        head = {"firm_id": self.firm_id, "z": self.z, "K": self.K,
                "hit_max_rounds": self.hit_max_rounds}
        lines = [json.dumps(head)]
        lines += [json.dumps(asdict(r)) for r in self.rounds]
        return "\n".join(lines) + "\n"


def search_fixed_cost(K, f_s: float, mu: float):
    """Fixed cost paid by a firm holding K suppliers to search for one more."""
    K_arr = np.asarray(K)
    if np.any(K_arr < 1):
        raise DomainError("K must be >= 1")
    cost = f_s * np.power(np.maximum(K_arr - 1.0, 0.0), mu)
    return float(cost) if np.ndim(cost) == 0 else cost


def firm_stream(master_seed: int, firm_id: int) -> np.random.Generator:
    """Independent generator for one firm; identical under any scheduling."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(firm_id),))
    return np.random.Generator(np.random.PCG64(ss))


def discount_factor(beta: float) -> float:
    return beta / (1.0 - beta)


@lru_cache(maxsize=16)
def _gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _export_breakpoint(z, index, params: ModelParams) -> np.ndarray:
    """Price of a new supplier that puts the firm exactly on the export threshold.

    Draws below the breakpoint make the firm an exporter.  Returned clipped to
    [p_lo, p_hi]; p_lo means "no kink inside the support".
    """
    lo, hi = params.p_lo, params.p_hi
    n = np.shape(index)
    if params.F_e == 0 or params.alpha >= 1:
        return np.full(n, lo)
    th, a = params.theta, params.alpha
    e = th / (th - 1.0)
    kappa = float(_export_threshold(1.0, params))
    c_star = np.asarray(z, dtype=float) / kappa
    A = a ** (1.0 / (1.0 - th)) * params.w ** e
    B = (1.0 - a) ** (1.0 / (1.0 - th))
    rhs = (c_star ** e - A) / B
    with np.errstate(divide="ignore", invalid="ignore"):
        pm_star = np.where(rhs > 0, rhs ** (1.0 / e), np.inf)
        ph = params.varphi / (params.varphi - 1.0)
        idx_star = np.where(np.isfinite(pm_star), (pm_star / lo) ** ph, 0.0)
        gap = idx_star - np.asarray(index, dtype=float)
        b = np.where(gap > 0, lo * gap ** (1.0 / ph), hi)
    b = np.where(np.isnan(b), lo, b)
    return np.clip(b, lo, hi)


def expected_payoff_from_index(z, index, params: ModelParams, nodes: int = 64) -> np.ndarray:
    """Expected profit gain from one more supplier, for arrays of firms."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    index = np.atleast_1d(np.asarray(index, dtype=float))
    lo, hi = params.p_lo, params.p_hi
    current = profit_from_index(z, index, params)
    ph = params.varphi / (params.varphi - 1.0)
    if hi == lo:
        return profit_from_index(z, index + 1.0, params) - current
    x, w = _gauss_legendre(nodes)
    b = _export_breakpoint(z, index, params)[:, None]
    total = np.zeros_like(z)
    for a_, b_ in ((lo, b), (b, hi)):
        half = (b_ - a_) / 2.0
        p = a_ + half * (x[None, :] + 1.0)
        vals = profit_from_index(z[:, None], index[:, None] + np.exp(ph * np.log(p / lo)), params)
        total = total + (vals * (w[None, :] * half / (hi - lo))).sum(axis=1)
    return total - current


def variety_index(prices, params: ModelParams) -> float:
    return float(_variety_terms(prices, params.varphi, params.p_lo).sum())


def expected_search_payoff(firm: Firm, params: ModelParams,
                           config: SearchConfig = SearchConfig()) -> float:
    firm.validate(params)
    S = variety_index(firm.supplier_prices, params)
    return float(expected_payoff_from_index(firm.z, S, params, config.quadrature_nodes)[0])


def search_decision(payoff, fixed_cost, beta: float):
    return discount_factor(beta) * payoff >= fixed_cost


def should_search(firm: Firm, params: ModelParams, config: SearchConfig = SearchConfig()) -> bool:
    payoff = expected_search_payoff(firm, params, config)
    cost = search_fixed_cost(firm.K, params.f_s, params.mu)
    return bool(search_decision(payoff, cost, params.beta))


def draw_price(u, params: ModelParams):
    return params.p_lo + (params.p_hi - params.p_lo) * u


def converge_supplier_set(firm: Firm, params: ModelParams, config: SearchConfig,
                          rng: np.random.Generator) -> SearchTrace:
    """Search until the stopping rule binds or ``max_rounds`` is reached.

    ``rng`` must be the firm's own stream positioned after its productivity
    and first-supplier draws.
    """
    firm.validate(params)
    prices = list(firm.supplier_prices)
    trace = SearchTrace(firm.id, float(firm.z))
    S = variety_index(prices, params)
    for _ in range(config.max_rounds):
        K = len(prices)
        payoff = float(expected_payoff_from_index(firm.z, S, params, config.quadrature_nodes)[0])
        cost = search_fixed_cost(K, params.f_s, params.mu)
        if not search_decision(payoff, cost, params.beta):
            trace.rounds.append(SearchRound(K, payoff, cost, False))
            break
        p = float(draw_price(rng.random(), params))
        prices.append(p)
        S += float(_variety_terms([p], params.varphi, params.p_lo)[0])
        trace.rounds.append(SearchRound(K, payoff, cost, True, p))
    else:
        trace.hit_max_rounds = True
    trace.supplier_prices = prices
    return trace
