"""Cross-section of firms: productivity draws, converged supplier sets, moments."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import DomainError, Firm, FirmOutcome, ModelParams, _variety_terms, solve_firm, solve_index
from .search import (
    SearchConfig,
    discount_factor,
    draw_price,
    expected_payoff_from_index,
    firm_stream,
    search_fixed_cost,
)

QUANTILE_GRID = np.linspace(0.0, 1.0, 101)


@dataclass
class FirmDraws:
    """Standardized random numbers for a set of firms.

    Column 0 of ``uniforms`` is the free first supplier; column r is the
    r-th search draw.  Productivity is exp(mu_z + sigma_z * normals).
    """

    seed: int
    firm_ids: np.ndarray
    normals: np.ndarray
    uniforms: np.ndarray

    @classmethod
    def generate(cls, n_firms: int, seed: int, max_rounds: int, first_id: int = 0) -> "FirmDraws":
        ids = np.arange(first_id, first_id + n_firms)
        normals = np.empty(n_firms)
        uniforms = np.empty((n_firms, max_rounds + 1))
        for row, fid in enumerate(ids):
            rng = firm_stream(seed, fid)
            normals[row] = rng.standard_normal()
            uniforms[row] = rng.random(max_rounds + 1)
        return cls(seed, ids, normals, uniforms)

    def __len__(self) -> int:
        return self.firm_ids.size

    def subset(self, rows) -> "FirmDraws":
        return FirmDraws(self.seed, self.firm_ids[rows], self.normals[rows], self.uniforms[rows])

    def productivity(self, params: ModelParams) -> np.ndarray:
        return np.exp(params.mu_z + params.sigma_z * self.normals)


@dataclass
class Population:
    params: ModelParams
    seed: int
    firm_ids: np.ndarray
    z: np.ndarray
    K: np.ndarray
    prices: np.ndarray          # (n, max_K) padded with NaN
    index: np.ndarray           # variety index per firm
    hit_max_rounds: np.ndarray
    solution: dict = field(default_factory=dict)
    draws: FirmDraws | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.z.size

    def supplier_prices(self, row: int) -> np.ndarray:
        return self.prices[row, : self.K[row]]

    @property
    def firms(self) -> list[Firm]:
        return [Firm(int(i), float(z), self.supplier_prices(r).tolist())
                for r, (i, z) in enumerate(zip(self.firm_ids, self.z))]

    @property
    def outcomes(self) -> list[FirmOutcome]:
        return [solve_firm(f, self.params) for f in self.firms]

    @property
    def min_price(self) -> np.ndarray:
        return np.nanmin(self.prices, axis=1)

    @property
    def top_share(self) -> np.ndarray:
        top = _variety_terms(self.min_price, self.params.varphi, self.params.p_lo)
        return top / self.index

    def firm_table(self) -> list[dict]:
        s = self.solution
        rows = []
        for r in range(len(self)):
            rows.append({
                "id": int(self.firm_ids[r]),
                "z": float(self.z[r]),
                "K": int(self.K[r]),
                "top_share": float(self.top_share[r]),
                "exports": int(s["exports"][r]),
                "import_value": float(s["import_value"][r]),
                "export_value": float(s["x_f"][r] * _export_price(s["C"][r], self.z[r], self.params)),
            })
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        rows = self.firm_table()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "params": self.params.to_dict(),
            "firms": [
                {"id": int(i), "z": float(z), "supplier_prices": self.supplier_prices(r).tolist()}
                for r, (i, z) in enumerate(zip(self.firm_ids, self.z))
            ],
        }


def _export_price(C, z, params: ModelParams) -> float:
    return params.rho / (params.rho - 1.0) * params.tau_f * C / z


def _converge(z, uniforms, params: ModelParams, config: SearchConfig):
    """Vectorized search loop; mirrors ``converge_supplier_set`` row by row.

    ``uniforms[:, 0]`` places the free first supplier, ``uniforms[:, K]`` is
    consumed by the search of a firm currently holding K suppliers.
    """
    n = z.size
    ph = params.varphi / (params.varphi - 1.0)
    prices = np.full((n, config.max_rounds + 1), np.nan)
    prices[:, 0] = draw_price(uniforms[:, 0], params)
    S = np.exp(ph * np.log(prices[:, 0] / params.p_lo))
    K = np.ones(n, dtype=int)
    active = np.ones(n, dtype=bool)
    disc = discount_factor(params.beta)
    for _ in range(config.max_rounds):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        payoff = expected_payoff_from_index(z[rows], S[rows], params, config.quadrature_nodes)
        cost = search_fixed_cost(K[rows], params.f_s, params.mu)
        go = disc * payoff >= cost
        active[rows[~go]] = False
        g = rows[go]
        p = draw_price(uniforms[g, K[g]], params)
        prices[g, K[g]] = p
        S[g] += np.exp(ph * np.log(p / params.p_lo))
        K[g] += 1
    return K, prices[:, : K.max()], S, active


def _simulate_chunk(args):
    params, config, draws = args
    z = draws.productivity(params)
    return _converge(z, draws.uniforms, params, config)


def simulate_population(params: ModelParams, config: SearchConfig = SearchConfig(),
                        n_firms: int = 5000, draws: FirmDraws | None = None,
                        threads: int = 1) -> Population:
    """Draw firms, converge every supplier set and solve the static problem.

    ``draws`` lets callers hold random numbers fixed across parameter values
    (common random numbers).  ``threads > 1`` splits firms across worker
    processes; results are identical to the serial run.
    """
    if n_firms < 1:
        raise DomainError("n_firms must be >= 1")
    if draws is None:
        draws = FirmDraws.generate(n_firms, config.rng_seed, config.max_rounds)
    elif len(draws) != n_firms:
        raise DomainError("draws do not match n_firms")
    if draws.uniforms.shape[1] < config.max_rounds + 1:
        raise DomainError("draws hold fewer rounds than max_rounds")
    if threads > 1 and n_firms > 1:
        chunks = np.array_split(np.arange(n_firms), min(threads, n_firms))
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_simulate_chunk, [(params, config, draws.subset(c)) for c in chunks]))
        width = max(p[1].shape[1] for p in parts)
        K = np.concatenate([p[0] for p in parts])
        prices = np.vstack([np.pad(p[1], ((0, 0), (0, width - p[1].shape[1])), constant_values=np.nan)
                            for p in parts])
        S = np.concatenate([p[2] for p in parts])
        hit = np.concatenate([p[3] for p in parts])
    else:
        K, prices, S, hit = _simulate_chunk((params, config, draws))
    z = draws.productivity(params)
    pop = Population(params, draws.seed, draws.firm_ids.copy(), z, K, prices, S, hit, draws=draws)
    pop.solution = solve_index(z, S, params)
    return pop


@dataclass
class MomentSet:
    mean_K: float
    median_K: float
    mean_top_share: float
    exporter_share: float
    import_values: np.ndarray
    import_curve: np.ndarray

    def scalars(self) -> dict[str, float]:
        return {
            "mean_K": self.mean_K,
            "median_K": self.median_K,
            "mean_top_share": self.mean_top_share,
            "exporter_share": self.exporter_share,
        }

    def to_dict(self) -> dict:
        d = self.scalars()
        d["quantile_grid"] = QUANTILE_GRID.tolist()
        d["import_curve"] = self.import_curve.tolist()
        d["import_values"] = self.import_values.tolist()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def cumulative_share_curve(values, grid=QUANTILE_GRID) -> np.ndarray:
    """Share of the total held by the poorest fraction q of units (Lorenz curve)."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0 or v.sum() <= 0:
        raise DomainError("need a positive total")
    cum = np.concatenate([[0.0], np.cumsum(v)]) / v.sum()
    pos = np.arange(v.size + 1) / v.size
    return np.interp(grid, pos, cum)


def moments_from_arrays(K, top_share, exports, import_values) -> MomentSet:
    K = np.asarray(K)
    if K.size == 0:
        raise DomainError("empty population")
    values = np.sort(np.asarray(import_values, dtype=float))
    return MomentSet(
        mean_K=float(K.mean()),
        median_K=float(np.median(K)),
        mean_top_share=float(np.mean(top_share)),
        exporter_share=float(np.mean(exports)),
        import_values=values,
        import_curve=cumulative_share_curve(values),
    )


def compute_moments(population: Population) -> MomentSet:
    if len(population) == 0:
        raise DomainError("empty population")
    s = population.solution
    return moments_from_arrays(population.K, population.top_share, s["exports"], s["import_value"])
