"""Command-line entry point: configuration-driven, seeded, atomic runs."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import shutil
import subprocess
import sys
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .calibration import CalibrationProblem, SMMObjective, calibrate
from .econometrics import (
    RegressionSpec,
    ShockProcess,
    TransactionPanel,
    build_shock,
    fe_extract,
    generate_synthetic_panel,
    granular_residual,
    panel_regress,
    persistence_stats,
    price_changes,
    stylized_facts,
    survival_stats,
)
from .econometrics.facts import DEFAULT_BURN_IN
from .econometrics.panel import SCHEMA_VERSION
from .model import DomainError, ModelParams
from .population import QUANTILE_GRID, compute_moments, simulate_population
from .search import SearchConfig
from .shocks import SWEEP_AXES, ShockExperiment, apply_top_supplier_shock, sensitivity_sweep, tercile_import_drops

logger = logging.getLogger("supplyshock")

OUT_ENV = "SUPPLYSHOCK_OUT"
COMMANDS = ("simulate", "calibrate", "shock", "sensitivity", "synthgen", "facts", "shiftshare", "regress")
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2

DEFAULT_GRIDS = {
    "f_s": [0.05, 0.1, 0.2, 0.4, 0.8],
    "mu": [0.3, 0.45, 0.6, 0.8, 1.0],
    "p_hi": [3.0, 3.5, 4.0, 4.5, 5.0],
    "varphi": [0.6, 0.65, 0.7, 0.75, 0.8],
}

# keys accepted in a command's JSON config
SECTIONS = {
    "params": "ModelParams fields",
    "search": "SearchConfig fields (rng_seed comes from --seed)",
    "calibration": "CalibrationProblem fields",
    "experiment": "ShockExperiment fields",
    "sweep": "axis and grid",
    "synth": "n_firms, T and ShockProcess fields",
    "regression": "RegressionSpec fields plus outcome",
}
SCALARS = {"n_firms", "seed", "threads", "format", "params_from", "panel", "shocks", "definition",
           "burn_in", "horizons", "K", "Q"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    options: dict = field(default_factory=dict)
    seed: int = 0
    out: Path = Path("runs")
    threads: int = 1
    emit: tuple = ("json", "csv")

    def section(self, name: str) -> dict:
        return dict(self.options.get(name, {}))


def build_id() -> str:
    """``git describe``-style identifier of the code producing an artifact."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--tags"], cwd=here, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def set_dotted(options: dict, key: str, value) -> None:
    parts = key.split(".")
    node = options
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}: {p} is not a section")
    node[parts[-1]] = value


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def validate_options(options: dict) -> None:
    unknown = set(options) - set(SECTIONS) - SCALARS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name in SECTIONS:
        if name in options and not isinstance(options[name], dict):
            raise ConfigError(f"'{name}' must be an object")
    checks = {
        "params": {f.name for f in dataclasses.fields(ModelParams)},
        "search": {"quadrature_nodes", "max_rounds"},
        "experiment": {f.name for f in dataclasses.fields(ShockExperiment)},
        "sweep": {"axis", "grid", "n_firms"},
        "synth": {"n_firms", "T"} | {f.name for f in dataclasses.fields(ShockProcess)},
        "regression": {f.name for f in dataclasses.fields(RegressionSpec)} | {"outcome"},
    }
    for name, allowed in checks.items():
        bad = set(options.get(name, {})) - allowed
        if bad:
            raise ConfigError(f"unknown keys in '{name}': {sorted(bad)}")


def load_config(args) -> RunConfig:
    options = {}
    if args.config:
        with open(args.config) as fh:
            options = json.load(fh)
        if not isinstance(options, dict):
            raise ConfigError("config must be a JSON object")
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        set_dotted(options, key, _parse_value(value))
    validate_options(options)
    seed = args.seed if args.seed is not None else int(options.get("seed", 0))
    threads = args.threads if args.threads is not None else int(options.get("threads", 1))
    fmt = args.format or options.get("format", "both")
    if fmt not in ("json", "csv", "both"):
        raise ConfigError("format must be json, csv or both")
    emit = ("json", "csv") if fmt == "both" else (fmt,)
    root = Path(os.environ.get(OUT_ENV, "runs"))
    out = Path(args.out) if args.out else root / args.command
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    return RunConfig(args.command, options, seed, out, threads, emit)


class Artifacts:
    """Collects outputs, stamps metadata, then moves them into place together."""

    def __init__(self, config: RunConfig, params: dict | None = None):
        self.config = config
        self.files: dict[str, str] = {}
        self.meta = {
            "schema_version": SCHEMA_VERSION,
            "command": config.command,
            "seed": config.seed,
            "build": build_id(),
            "config": config.options,
            "params": params or {},
        }

    def _header(self, name: str) -> str:
        m = self.meta
        return (f"# schema_version={m['schema_version']} table={name} command={m['command']} "
                f"seed={m['seed']} build={m['build']}\n"
                f"# params={json.dumps(m['params'], sort_keys=True)}\n")

    def table(self, name: str, df: pd.DataFrame) -> None:
        if "csv" in self.config.emit:
            body = df.to_csv(index=False, lineterminator="\n", float_format="%.17g")
            self.files[f"{name}.csv"] = self._header(name) + body
        if "json" in self.config.emit:
            records = json.loads(df.to_json(orient="records", double_precision=15))
            self.document(name, {"rows": records})

    def document(self, name: str, payload: dict) -> None:
        if "json" not in self.config.emit and name != "metadata":
            return
        body = {"metadata": self.meta, **payload}
        self.files[f"{name}.json"] = json.dumps(body, indent=2, sort_keys=True, default=_jsonable) + "\n"

    def commit(self) -> None:
        out = self.config.out
        out.mkdir(parents=True, exist_ok=True)
        staging = out / ".staging"
        if staging.exists():
            shutil.rmtree(staging)
        staging.mkdir()
        self.files["metadata.json"] = json.dumps(self.meta, indent=2, sort_keys=True, default=_jsonable) + "\n"
        for name, text in self.files.items():
            (staging / name).write_text(text)
        for name in self.files:
            os.replace(staging / name, out / name)
        staging.rmdir()
        marker = out / ".failed"
        if marker.exists():
            marker.unlink()


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not serializable: {type(obj)}")


def _params(config: RunConfig) -> ModelParams:
    base = {}
    if "params_from" in config.options:
        with open(config.options["params_from"]) as fh:
            doc = json.load(fh)
        base = doc.get("params") or doc.get("result", {}).get("params") or {}
    return ModelParams.from_dict({**base, **config.section("params")})


def _search(config: RunConfig) -> SearchConfig:
    return SearchConfig(rng_seed=config.seed, **config.section("search"))


def _read_panel(config: RunConfig) -> TransactionPanel:
    path = config.options.get("panel")
    if not path:
        raise ConfigError("this command needs 'panel' (path to a transactions CSV)")
    return TransactionPanel.from_csv(path)


def cmd_simulate(config: RunConfig) -> Artifacts:
    params = _params(config)
    pop = simulate_population(params, _search(config), int(config.options.get("n_firms", 5000)),
                              threads=config.threads)
    m = compute_moments(pop)
    art = Artifacts(config, params.to_dict())
    art.table("firms", pd.DataFrame(pop.firm_table()))
    art.table("import_curve", pd.DataFrame({"quantile": QUANTILE_GRID, "cumulative_share": m.import_curve}))
    art.document("moments", {"moments": m.scalars(), "hit_max_rounds": int(pop.hit_max_rounds.sum())})
    return art


def cmd_calibrate(config: RunConfig) -> Artifacts:
    spec = config.section("calibration")
    spec.setdefault("seed", config.seed)
    if "params" in config.options:
        spec["fixed"] = {**spec.get("fixed", {}), **config.section("params")}
    if "search" in config.options:
        spec["search"] = {**spec.get("search", {}), **config.section("search")}
    if "n_firms" in config.options:
        spec["n_firms"] = int(config.options["n_firms"])
    try:
        problem = CalibrationProblem.from_dict(spec)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    result = calibrate(problem)
    art = Artifacts(config, result.params.to_dict())
    art.document("calibration", {"result": result.to_dict(), "problem": problem.to_dict()})
    if "csv" in config.emit:
        art.files["calibration_log.csv"] = art._header("calibration_log") + result.log_csv()
    curve = SMMObjective(problem).moments(result.values).import_curve
    art.table("import_curve", pd.DataFrame({"quantile": QUANTILE_GRID, "model": curve,
                                            "target": problem.target_curve}))
    return art


def _experiment(config: RunConfig) -> ShockExperiment:
    return ShockExperiment(**config.section("experiment"))


def cmd_shock(config: RunConfig) -> Artifacts:
    params = _params(config)
    search = _search(config)
    pop = simulate_population(params, search, int(config.options.get("n_firms", 5000)), threads=config.threads)
    curve = apply_top_supplier_shock(pop, _experiment(config), search)
    art = Artifacts(config, params.to_dict())
    art.table("impact_curve", curve.table)
    terciles = {p: tercile_import_drops(curve, p).tolist() for p in ("t", "t+1")}
    art.document("shock_summary", {"summary": curve.summary, "tercile_mean_abs_import_drop": terciles})
    return art


def cmd_sensitivity(config: RunConfig) -> Artifacts:
    params = _params(config)
    search = _search(config)
    sweep = config.section("sweep")
    axes = [sweep["axis"]] if "axis" in sweep else list(SWEEP_AXES)
    n = int(sweep.get("n_firms", config.options.get("n_firms", 2000)))
    frames = []
    for axis in axes:
        grid = sweep.get("grid", DEFAULT_GRIDS[axis]) if len(axes) == 1 else DEFAULT_GRIDS[axis]
        frames.append(sensitivity_sweep(params, axis, grid, search, n, _experiment(config)))
    art = Artifacts(config, params.to_dict())
    art.table("sensitivity", pd.concat(frames, ignore_index=True))
    return art


def cmd_synthgen(config: RunConfig) -> Artifacts:
    params = _params(config)
    synth = config.section("synth")
    n = int(synth.pop("n_firms", config.options.get("n_firms", 200)))
    T = int(synth.pop("T", 6))
    if "planted" in synth:
        synth["planted"] = {tuple(int(v) for v in k.split(",")): g for k, g in synth["planted"].items()}
    process = ShockProcess(**synth)
    pop = simulate_population(params, _search(config), n, threads=config.threads)
    syn = generate_synthetic_panel(pop, T, process, seed=config.seed)
    art = Artifacts(config, params.to_dict())
    art.table("transactions", syn.panel.data)
    art.table("planted_gamma", syn.gamma)
    art.table("firm_outcomes", syn.firm_outcomes)
    return art


def cmd_facts(config: RunConfig) -> Artifacts:
    panel = _read_panel(config)
    burn_in = int(config.options.get("burn_in", DEFAULT_BURN_IN))
    horizons = config.options.get("horizons", [1, 2, 3])
    art = Artifacts(config)
    art.table("facts", stylized_facts(panel, burn_in))
    rows, pers = [], []
    for s in horizons:
        if panel.periods.size < s + 1:
            continue
        for cls in ("all", "top", "new"):
            try:
                rows.append(survival_stats(panel, s, cls, burn_in).to_dict())
            except DomainError as exc:
                logger.info("survival %s/%s skipped: %s", s, cls, exc)
        pers.append(persistence_stats(panel, s))
    art.table("survival", pd.DataFrame(rows))
    art.table("persistence", pd.DataFrame(pers))
    K = int(config.options.get("K", 10))
    Q = int(config.options.get("Q", max(K, 20)))
    if panel.periods.size >= 3:
        gr = granular_residual(panel, K, Q)
        art.table("granular_residual", gr.series)
        art.document("granular_fit", {"K": K, "Q": Q, "r2": gr.r2, "adj_r2": gr.adj_r2,
                                      "degenerate": gr.degenerate, "dropped_periods": gr.dropped_periods})
    return art


def cmd_shiftshare(config: RunConfig) -> Artifacts:
    panel = _read_panel(config)
    definition = config.options.get("definition", "log")
    changes = price_changes(panel, definition)
    est = fe_extract(changes)
    shocks = build_shock(est, panel)
    art = Artifacts(config)
    art.table("shocks", shocks.data)
    art.table("supplier_effects", est.supplier_effects)
    art.table("shock_stats", shocks.describe())
    art.document("fe_report", {"definition": definition, "diagnostics": changes.diagnostics,
                               "sweeps": {str(k): v for k, v in est.sweeps.items()},
                               "converged": est.converged,
                               "singleton_components": int(est.components["singleton"].sum())})
    return art


def _outcome_frame(config: RunConfig, spec: RegressionSpec, outcome: str) -> pd.DataFrame:
    """Log imported quantity at the regression's unit level, or a column of an outcome CSV."""
    if outcome == "imports":
        panel = _read_panel(config)
        df = panel.data.groupby(spec.units + ["period"], as_index=False)["quantity"].sum()
        if "country_id" in spec.cluster and "country_id" not in df:
            country = panel.data.groupby(spec.units)["country_id"].first().reset_index()
            df = df.merge(country, on=spec.units)
        return df.assign(**{spec.outcome: np.log(df["quantity"])})
    path, _, column = outcome.partition(":")
    df = pd.read_csv(path, comment="#")
    if column not in df:
        raise ConfigError(f"outcome column {column!r} not in {path}")
    df = df[df[column] > 0]
    return df.assign(**{spec.outcome: np.log(df[column])})


def cmd_regress(config: RunConfig) -> Artifacts:
    reg = config.section("regression")
    outcome = reg.pop("outcome", "imports")
    spec = RegressionSpec(**reg)
    if not config.options.get("shocks"):
        raise ConfigError("regress needs 'shocks' (path to a shock-series CSV)")
    shocks = pd.read_csv(config.options["shocks"], comment="#")
    df = _outcome_frame(config, spec, outcome)
    result = panel_regress(df, shocks, spec)
    art = Artifacts(config)
    art.table("regression", result.table())
    art.document("regression_fit", {"n_obs": result.n_obs, "r2_within": result.r2_within,
                                    "fe_dims": result.fe_dims, "dropped": result.dropped,
                                    "n_clusters": result.n_clusters})
    return art


HANDLERS = {
    "simulate": cmd_simulate, "calibrate": cmd_calibrate, "shock": cmd_shock,
    "sensitivity": cmd_sensitivity, "synthgen": cmd_synthgen, "facts": cmd_facts,
    "shiftshare": cmd_shiftshare, "regress": cmd_regress,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="supplyshock", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HANDLERS[name].__doc__)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted override, e.g. params.f_s=0.2 (repeatable)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command> or runs/<command>)")
        p.add_argument("--threads", type=int)
        p.add_argument("--format", choices=("json", "csv", "both"))
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _report(kind: str, exc: BaseException) -> str:
    return json.dumps({"status": "error", "kind": kind, "type": type(exc).__name__, "message": str(exc)})


def _mark_failed(out: Path, report: str) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        staging = out / ".staging"
        if staging.exists():
            shutil.rmtree(staging)
        (out / ".failed").write_text(report + "\n")
    except OSError:
        pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args)
    except (ConfigError, DomainError, KeyError, TypeError, json.JSONDecodeError, OSError) as exc:
        print(_report("validation", exc), file=sys.stderr)
        return EXIT_VALIDATION
    try:
        art = HANDLERS[config.command](config)
        art.commit()
    except (ConfigError, DomainError, TypeError) as exc:
        report = _report("validation", exc)
        _mark_failed(config.out, report)
        print(report, file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - any runtime failure is reported, not raised
        logger.debug("%s", traceback.format_exc())
        report = _report("runtime", exc)
        _mark_failed(config.out, report)
        print(report, file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps({"status": "ok", "out": str(config.out), "files": sorted(art.files)}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
