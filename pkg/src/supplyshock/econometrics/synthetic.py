"""Synthetic transaction panels generated by the model, with planted truth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..model import DomainError, _variety_terms, solve_index
from ..population import Population
from .panel import TransactionPanel


@dataclass
class ShockProcess:
    """Planted price dynamics for the synthetic panel.

    Supplier-time shocks are multiplicative: ln P rises by ln(1 + gamma*)
    with gamma* = exp(N(0, sigma_gamma)) - 1 unless ``planted`` pins
    specific (supplier_id, period) values.  ``sigma_firm`` adds a firm-time
    component and ``sigma_noise`` an instance-level one.
    """

    sigma_gamma: float = 0.1
    sigma_firm: float = 0.0
    sigma_noise: float = 0.0
    n_suppliers: int = 50
    n_products: int = 20
    n_countries: int = 25
    churn: float = 0.0
    planted: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("sigma_gamma", "sigma_firm", "sigma_noise"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")
        if min(self.n_suppliers, self.n_products, self.n_countries) < 1:
            raise DomainError("pool sizes must be >= 1")
        if not 0.0 <= self.churn < 1.0:
            raise DomainError("churn must lie in [0, 1)")
        if any(g <= -1 for g in self.planted.values()):
            raise DomainError("planted shocks must exceed -1")


@dataclass
class SyntheticPanel:
    panel: TransactionPanel
    gamma: pd.DataFrame            # supplier_id, period, gamma_star, gamma (= ln(1 + gamma_star))
    firm_shocks: pd.DataFrame      # firm_id, period, log shock
    firm_outcomes: pd.DataFrame    # firm_id, period, import/export quantities
    seed: int = 0


def _planted_gamma(process: ShockProcess, T: int, rng) -> np.ndarray:
    """log(1 + gamma*) per (supplier, period); period 0 carries no shock."""
    g = np.zeros((process.n_suppliers, T))
    if process.sigma_gamma > 0:
        g[:, 1:] = rng.normal(0.0, process.sigma_gamma, size=(process.n_suppliers, T - 1))
    for (s, t), val in process.planted.items():
        if not (0 <= s < process.n_suppliers and 0 <= t < T):
            raise DomainError(f"planted shock {(s, t)} outside the panel")
        g[s, t] = np.log1p(val)
    return g


def generate_synthetic_panel(population: Population, T: int, shock_process: ShockProcess = ShockProcess(),
                             seed: int = 0) -> SyntheticPanel:
    """One instance per firm-supplier link and period, quantities from the model.

    Each firm's model suppliers are mapped to distinct ids in a global pool
    (firms holding more suppliers than the pool keep their cheapest ones).
    Every supplier sits in one country; every link trades one product.
    """
    if T < 3:
        raise DomainError("T must be >= 3")
    proc = shock_process
    params = population.params
    rng = np.random.default_rng(seed)
    gamma = _planted_gamma(proc, T, rng)
    cum = np.cumsum(gamma, axis=1)
    country_of = rng.integers(0, proc.n_countries, size=proc.n_suppliers)
    n = len(population)

    firm_rows, links = [], []
    for r in range(n):
        prices = np.sort(population.supplier_prices(r))[: proc.n_suppliers]
        ids = rng.choice(proc.n_suppliers, size=prices.size, replace=False)
        prod = rng.integers(0, proc.n_products, size=prices.size)
        links.append([list(x) for x in zip(ids, prod, prices)])
    firm_eps = rng.normal(0.0, proc.sigma_firm, size=(n, T)) if proc.sigma_firm > 0 else np.zeros((n, T))

    records = []
    for t in range(T):
        if t > 0 and proc.churn > 0:
            for r in range(n):
                held = {l[0] for l in links[r]}
                for l in links[r]:
                    if rng.random() < proc.churn:
                        free = np.setdiff1d(np.arange(proc.n_suppliers), list(held))
                        if free.size == 0:
                            continue
                        new = int(rng.choice(free))
                        held.discard(l[0])
                        held.add(new)
                        l[0] = new
                        l[1] = int(rng.integers(0, proc.n_products))
                        l[2] = float(params.p_lo + (params.p_hi - params.p_lo) * rng.random())
        sizes = np.array([len(l) for l in links])
        sid = np.concatenate([[l[0] for l in ls] for ls in links]).astype(int)
        pid = np.concatenate([[l[1] for l in ls] for ls in links]).astype(int)
        base = np.concatenate([[l[2] for l in ls] for ls in links]).astype(float)
        owner = np.repeat(np.arange(n), sizes)
        noise = rng.normal(0.0, proc.sigma_noise, size=sid.size) if proc.sigma_noise > 0 else 0.0
        log_p = np.log(base) + cum[sid, t] + firm_eps[owner, t] + noise
        p = np.exp(log_p)
        index = np.bincount(owner, _variety_terms(p, params.varphi, params.p_lo), minlength=n)
        sol = solve_index(population.z, index, params)
        M = sol["M_d"] + sol["M_f"]
        m = (sol["p_M"][owner] / p) ** (1.0 / (1.0 - params.varphi)) * M[owner]
        records.append(pd.DataFrame({
            "firm_id": population.firm_ids[owner],
            "supplier_id": sid,
            "product_id": pid,
            "country_id": country_of[sid],
            "period": t,
            "value": p * m,
            "quantity": m,
        }))
        firm_rows.append(pd.DataFrame({
            "firm_id": population.firm_ids, "period": t,
            "import_quantity": M, "export_quantity": sol["x_f"], "exports": sol["exports"],
        }))
    panel = TransactionPanel(pd.concat(records, ignore_index=True))
    s_idx, t_idx = np.meshgrid(np.arange(proc.n_suppliers), np.arange(T), indexing="ij")
    truth = pd.DataFrame({
        "supplier_id": s_idx.ravel(), "period": t_idx.ravel(),
        "gamma_star": np.expm1(gamma.ravel()), "gamma": gamma.ravel(),
    })
    f_idx, tf = np.meshgrid(population.firm_ids, np.arange(T), indexing="ij")
    firm_shocks = pd.DataFrame({"firm_id": f_idx.ravel(), "period": tf.ravel(), "shock": firm_eps.ravel()})
    return SyntheticPanel(panel, truth, firm_shocks, pd.concat(firm_rows, ignore_index=True), seed)


def plant_response(shocks: pd.DataFrame, beta: float, seed: int = 0, noise: float = 0.05,
                   unit_sd: float = 1.0, period_sd: float = 0.2,
                   units: pd.DataFrame | None = None) -> pd.DataFrame:
    """Outcome y = beta * shock + unit effect + period effect + noise.

    ``shocks`` has firm_id, period, shock.  ``units`` optionally expands each
    firm into several outcome units (rows of firm_id plus extra id columns);
    by default the firm is the unit.
    """
    rng = np.random.default_rng(seed)
    base = shocks[["firm_id", "period", "shock"]]
    if units is None:
        units = base[["firm_id"]].drop_duplicates().reset_index(drop=True)
    units = units.reset_index(drop=True).assign(unit_effect=lambda d: rng.normal(0.0, unit_sd, len(d)))
    periods = np.sort(base["period"].unique())
    peff = pd.DataFrame({"period": periods, "period_effect": rng.normal(0.0, period_sd, periods.size)})
    out = units.merge(base, on="firm_id").merge(peff, on="period")
    out = out.sort_values(list(units.columns.drop("unit_effect")) + ["period"], kind="mergesort")
    out = out.reset_index(drop=True)
    out["y"] = beta * out["shock"] + out["unit_effect"] + out["period_effect"] + rng.normal(0.0, noise, len(out))
    return out.drop(columns=["unit_effect", "period_effect"])
