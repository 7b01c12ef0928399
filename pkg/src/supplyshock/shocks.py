"""Top-supplier cost shock and parameter sensitivity sweeps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .model import DomainError, ModelParams, _variety_terms, solve_index
from .population import FirmDraws, Population, compute_moments, simulate_population
from .search import (
    SearchConfig,
    discount_factor,
    draw_price,
    expected_payoff_from_index,
    search_fixed_cost,
)

SWEEP_AXES = ("f_s", "mu", "p_hi", "varphi")

CURVE_COLUMNS = [
    "firm_id", "z", "K", "period", "K_after", "searched",
    "exports_before", "exports_after", "d_imports", "d_exports",
]


@dataclass
class ShockExperiment:
    shock_size: float = 0.15
    re_search: bool = True
    # False: one search opportunity at t+1; True: search until the rule stops
    search_to_convergence: bool = False
    log_changes: bool = False

    def __post_init__(self):
        if self.shock_size <= -1:
            raise DomainError("shock_size must exceed -1")


@dataclass
class ImpactCurve:
    table: pd.DataFrame
    summary: dict = field(default_factory=dict)

    def period(self, label: str) -> pd.DataFrame:
        return self.table[self.table["period"] == label].reset_index(drop=True)

    def to_csv(self) -> str:
        return self.table.to_csv(index=False, lineterminator="\n", float_format="%.17g")


def _change(new, old, log: bool):
    new = np.asarray(new, dtype=float)
    old = np.asarray(old, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if log:
            return 100.0 * np.log(new / old)
        return 100.0 * (new - old) / old


def _index(prices: np.ndarray, params: ModelParams) -> np.ndarray:
    terms = _variety_terms(np.where(np.isnan(prices), np.inf, prices), params.varphi, params.p_lo)
    return terms.sum(axis=1)


def _top_rows(prices: np.ndarray) -> np.ndarray:
    return np.nanargmin(prices, axis=1)


def apply_top_supplier_shock(population: Population, experiment: ShockExperiment = ShockExperiment(),
                             config: SearchConfig = SearchConfig(),
                             draws: FirmDraws | None = None) -> ImpactCurve:
    """Raise each firm's cheapest supplier price and trace quantities at t and t+1.

    Period t re-solves the static problem with the shocked price.  Period t+1
    gives each firm one search opportunity under the shocked set (or searches
    to convergence); new suppliers come from the firm's own draw stream.
    """
    params = population.params
    n = len(population)
    prices0 = population.prices.copy()
    top = _top_rows(prices0)
    prices1 = prices0.copy()
    prices1[np.arange(n), top] *= 1.0 + experiment.shock_size
    z = population.z
    base = solve_index(z, _index(prices0, params), params)
    S1 = _index(prices1, params)
    shocked = solve_index(z, S1, params)

    K = population.K.copy()
    K_after = K.copy()
    S2 = S1.copy()
    if experiment.re_search:
        if draws is None:
            draws = population.draws
        if draws is None:
            raise DomainError("re-search needs the population's draw stream")
        disc = discount_factor(params.beta)
        active = np.ones(n, dtype=bool)
        rounds = config.max_rounds if experiment.search_to_convergence else 1
        for _ in range(rounds):
            rows = np.flatnonzero(active & (K_after < draws.uniforms.shape[1]))
            if rows.size == 0:
                break
            pay = expected_payoff_from_index(z[rows], S2[rows], params, config.quadrature_nodes)
            go = disc * pay >= search_fixed_cost(K_after[rows], params.f_s, params.mu)
            active[rows[~go]] = False
            g = rows[go]
            p = draw_price(draws.uniforms[g, K_after[g]], params)
            S2[g] += _variety_terms(p, params.varphi, params.p_lo)
            K_after[g] += 1
    after = solve_index(z, S2, params)

    frames = []
    for label, sol, k_after in (("t", shocked, K), ("t+1", after, K_after)):
        d_exp = _change(sol["x_f"], base["x_f"], experiment.log_changes)
        d_exp = np.where(base["exports"], d_exp, np.nan)
        frames.append(pd.DataFrame({
            "firm_id": population.firm_ids,
            "z": z,
            "K": K,
            "period": label,
            "K_after": k_after,
            "searched": k_after > K,
            "exports_before": base["exports"],
            "exports_after": sol["exports"],
            "d_imports": _change(sol["import_quantity"], base["import_quantity"], experiment.log_changes),
            "d_exports": d_exp,
        }))
    table = pd.concat(frames, ignore_index=True)[CURVE_COLUMNS]
    return ImpactCurve(table, summarize(table))


def summarize(table: pd.DataFrame) -> dict:
    """Export/import drop ratio over firms exporting before and after the shock."""
    out = {}
    for label in ("t", "t+1"):
        sub = table[table["period"] == label]
        keep = sub["exports_before"] & sub["exports_after"] & (sub["d_imports"] != 0)
        ratio = (sub["d_exports"] / sub["d_imports"])[keep]
        out[label] = {
            "ratio_mean": float(ratio.mean()) if len(ratio) else float("nan"),
            "ratio_median": float(ratio.median()) if len(ratio) else float("nan"),
            "n_ratio": int(keep.sum()),
            "n_stopped_exporting": int((sub["exports_before"] & ~sub["exports_after"]).sum()),
            "mean_d_imports": float(sub["d_imports"].mean()),
            "mean_d_exports": float(sub["d_exports"].mean()),
            "share_searched": float(sub["searched"].mean()),
        }
    return out


def tercile_import_drops(curve: ImpactCurve, period: str = "t") -> np.ndarray:
    """Mean |%dM| within productivity terciles, lowest z first."""
    sub = curve.period(period).sort_values(["z", "firm_id"], kind="mergesort")
    parts = np.array_split(sub["d_imports"].abs().to_numpy(), 3)
    return np.array([p.mean() for p in parts])


def _check_grid(base: ModelParams, axis: str, grid) -> list[float]:
    if axis not in SWEEP_AXES:
        raise DomainError(f"axis must be one of {SWEEP_AXES}")
    grid = [float(v) for v in grid]
    if not grid:
        raise DomainError("empty grid")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise DomainError("grid must be sorted")
    for v in grid:
        base.replace(**{axis: v})  # raises DomainError when inadmissible
    return grid


def sensitivity_sweep(base_params: ModelParams, axis: str, grid, config: SearchConfig = SearchConfig(),
                      n_firms: int = 5000, experiment: ShockExperiment = ShockExperiment(),
                      draws: FirmDraws | None = None) -> pd.DataFrame:
    """Moments and mean shock impact along one parameter, common random numbers."""
    grid = _check_grid(base_params, axis, grid)
    if draws is None:
        draws = FirmDraws.generate(n_firms, config.rng_seed, config.max_rounds)
    rows = []
    for v in grid:
        params = base_params.replace(**{axis: v})
        pop = simulate_population(params, config, n_firms, draws)
        m = compute_moments(pop)
        curve = apply_top_supplier_shock(pop, experiment, config, draws)
        t = curve.period("t")
        stats = {
            "mean_K": m.mean_K,
            "mean_top_share": m.mean_top_share,
            "mean_import_impact": float(t["d_imports"].mean()),
            "mean_export_impact": float(t["d_exports"].mean()),
        }
        rows += [{"axis": axis, "value": v, "statistic": k, "estimate": s} for k, s in stats.items()]
    return pd.DataFrame(rows, columns=["axis", "value", "statistic", "estimate"])
