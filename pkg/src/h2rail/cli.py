"""Command-line front end: ``h2rail optimize | fit | gen-route``.

Exit codes: 0 optimal and tight, 1 missing or invalid input, 2 optimal but a
relaxation is slack, 3 infeasible, 4 convex fit failed, 5 solver did not
converge.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import __version__
from .formulation import InfeasibleByConstruction, Weights, check_time, reachable_time_bound
from .pipeline import PipelineError, PipelineResult, run_concurrent, run_sequential
from .powertrain import (BatteryParams, FitError, MapRangeError, ParameterError, SurrogateFits, TrainParams,
                         default_fuelcell_map, default_motor_map, fit_all, load_fuelcell_map, load_motor_map,
                         load_params)
from .route import RouteError, discretize, load_route, synthetic_route, write_route
from .simulator import SimulationError, compare, simulate
from .solver import INFEASIBLE, SolverSettings
from .trajectory import check_tightness

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("h2rail")

EXIT_OK, EXIT_INPUT, EXIT_SLACK, EXIT_INFEASIBLE, EXIT_FIT, EXIT_SOLVER = 0, 1, 2, 3, 4, 5

DEFAULT_TAU = 800.0          # target time of the default 10 km, 3-stop synthetic route
LONG_LINE_M, LONG_LINE_STOPS, LONG_LINE_TAU = 63_000.0, 18, 87 * 60.0   # 63 km, 16 intermediate stops


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    route: str | None = None            # route CSV; synthetic route when absent
    stations: str | None = None
    params: str | None = None           # vehicle/battery TOML; built-in defaults when absent
    motor_map: str | None = None
    fuel_cell_map: str | None = None
    length_m: float = 10_000.0          # synthetic route options
    stops: int = 3
    seed: int = 0
    tau: float | None = None
    ds: float = 10.0
    z_stop: float = 0.01
    dwell_samples: int = 5
    feas_tol: float = 1e-7
    gap_tol: float = 1e-7
    max_iter: int = 100
    tightness: float = 1e-3
    weight_gamma: float = 1.0
    weight_omega: float = 1.0
    pipeline: str = "concurrent"
    out: str = "out"
    base_dir: str = field(default=".", compare=False)

    def path(self, name: str) -> Path | None:
        p = getattr(self, name)
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def validate(self) -> None:
        for name in ("route", "stations", "params", "motor_map", "fuel_cell_map"):
            p = self.path(name)
            if p is not None and not p.is_file():
                raise FileNotFoundError(f"{name} file not found: {p}")
        if self.pipeline not in ("concurrent", "sequential", "both"):
            raise ConfigError(f"pipeline must be concurrent, sequential or both, not {self.pipeline!r}")
        if not self.ds > 0 or not self.z_stop > 0 or self.dwell_samples < 1:
            raise ConfigError("ds and z_stop must be positive and dwell_samples at least 1")
        if self.tau is not None and not self.tau > 0:
            raise ConfigError("target time must be positive")

    def digest(self) -> str:
        """Hash of every setting plus the bytes of every referenced file."""
        h = hashlib.sha256()
        data = {k: v for k, v in asdict(self).items() if k not in ("base_dir", "out")}
        h.update(json.dumps(data, sort_keys=True).encode())
        for name in ("route", "stations", "params", "motor_map", "fuel_cell_map"):
            p = self.path(name)
            if p is not None:
                h.update(name.encode())
                h.update(p.read_bytes())
        h.update(__version__.encode())
        return h.hexdigest()[:16]


_SECTIONS = {
    "paths": ("route", "stations", "params", "motor_map", "fuel_cell_map"),
    "synthetic": ("length_m", "stops", "seed"),
    "grid": ("ds", "z_stop", "dwell_samples"),
    "solver": ("feas_tol", "gap_tol", "max_iter", "tightness"),
    "weights": ("weight_gamma", "weight_omega"),
    "run": ("tau", "pipeline", "out"),
}


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    kw = {}
    for section, keys in _SECTIONS.items():
        sec = data.pop(section, {})
        unknown = set(sec) - set(keys)
        if unknown:
            raise ConfigError(f"{path}: unknown keys in [{section}]: {sorted(unknown)}")
        kw.update(sec)
    if data:
        raise ConfigError(f"{path}: unknown sections {sorted(data)}")
    try:
        return RunConfig(**kw, base_dir=str(path.parent))
    except TypeError as e:
        raise ConfigError(f"{path}: {e}") from None


def config_to_toml(cfg: RunConfig) -> str:
    lines = []
    for section, keys in _SECTIONS.items():
        vals = [(k, getattr(cfg, k)) for k in keys if getattr(cfg, k) is not None]
        if not vals:
            continue
        lines.append(f"[{section}]")
        for k, v in vals:
            lines.append(f"{k} = {json.dumps(v)}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# shared loading

def _inputs(cfg: RunConfig):
    if cfg.params:
        params, batt = load_params(cfg.path("params"))
    else:
        params, batt = TrainParams(), BatteryParams()
    mm = load_motor_map(cfg.path("motor_map")) if cfg.motor_map else default_motor_map(params)
    fm = load_fuelcell_map(cfg.path("fuel_cell_map")) if cfg.fuel_cell_map else default_fuelcell_map(params)
    return params, batt, mm, fm


def default_target_time(route, ds: float = 10.0, params: TrainParams = TrainParams()) -> float:
    """800 s on the default 10 km, 3-stop line, 87 minutes on a 63 km, 18-station line;
    otherwise 1.5x the lower bound, rounded up to 10 s."""
    if route.total_length == RunConfig.length_m and len(route.stations) == RunConfig.stops:
        return DEFAULT_TAU
    if route.total_length == LONG_LINE_M and len(route.stations) == LONG_LINE_STOPS:
        return LONG_LINE_TAU
    lb = reachable_time_bound(discretize(route.with_target_time(1.0), ds), params)
    return 10.0 * math.ceil(1.5 * lb / 10.0)


def _route(cfg: RunConfig):
    if cfg.route:
        route = load_route(cfg.path("route"), cfg.path("stations"))
        if cfg.tau is None:
            raise ConfigError("no target time: set [run] tau or pass --tau")
        return route.with_target_time(cfg.tau)
    route = synthetic_route(cfg.length_m, cfg.stops, cfg.seed)
    return route.with_target_time(cfg.tau if cfg.tau is not None else default_target_time(route, cfg.ds))


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")


def _fits_text(fits: SurrogateFits, header: tuple[str, ...]) -> str:
    m, f, s = fits.motor, fits.fuel_cell, fits.soc
    lines = [f"# {h}" for h in header]
    lines += [
        "[motor] electric force = p00 + p10 z + p01 F_m + p11 F_m z + p20 z^2 + p02 F_m^2",
        f"coefficients {' '.join(f'{c:.10g}' for c in m.coeffs)}",
        f"max_rel_residual {m.stats.max_rel:.6g}",
        f"mean_rel_residual {m.stats.mean_rel:.6g}",
        f"min_eigenvalue_scaled {m.min_eigenvalue():.6g}",
        f"convex {m.is_convex()}",
        f"psd_constrained {m.constrained}",
        "[fuel_cell] fuel per metre = p0 F_fc + p1 z",
        f"coefficients {f.p0:.10g} {f.p1:.10g}",
        f"max_rel_residual {f.stats.max_rel:.6g}",
        f"mean_rel_residual {f.stats.mean_rel:.6g}",
        "[battery] depletion rate = alpha P^2 + beta P",
        f"coefficients {s.alpha:.10g} {s.beta:.10g}",
        f"method {s.method}",
        f"max_residual_of_peak {s.stats.max_rel:.6g}",
        f"convex {s.alpha > 0 and s.beta > 0}",
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands

def cmd_fit(cfg: RunConfig) -> int:
    cfg.validate()
    digest = cfg.digest()
    params, batt, mm, fm = _inputs(cfg)
    fits = fit_all(params, batt, mm, fm)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    header = (f"config_hash {digest}",)
    data = {"config_hash": digest, **fits.to_dict()}
    _write(out / "fits.json", json.dumps(data, indent=2, sort_keys=True) + "\n")
    text = _fits_text(fits, header)
    _write(out / "fits.txt", text)
    print(text, end="")
    return EXIT_OK


def cmd_optimize(cfg: RunConfig) -> int:
    cfg.validate()
    digest = cfg.digest()
    params, batt, mm, fm = _inputs(cfg)
    route = _route(cfg)
    grid = discretize(route, cfg.ds, cfg.z_stop, cfg.dwell_samples)
    check_time(grid, params)
    fits = fit_all(params, batt, mm, fm)
    settings = SolverSettings(feas_tol=cfg.feas_tol, gap_tol=cfg.gap_tol, max_iter=cfg.max_iter)
    weights = Weights(cfg.weight_gamma, cfg.weight_omega)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    header = (f"config_hash {digest}",)

    runners = {"concurrent": run_concurrent, "sequential": run_sequential}
    names = ["concurrent", "sequential"] if cfg.pipeline == "both" else [cfg.pipeline]
    results: dict[str, PipelineResult] = {n: runners[n](grid, params, batt, fits, weights, settings) for n in names}

    tight = True
    reports = {}
    for name, res in results.items():
        traj = res.traj
        _write(out / f"trajectory_{name}.csv", traj.to_csv(header))
        rep = check_tightness(traj, fits, params, grid, cfg.tightness)
        tight &= rep.tight
        _write(out / f"tightness_{name}.txt", "\n".join(f"# {h}" for h in header) + "\n" + rep.to_text())
        logs = [f"# {h}" for h in header]
        for stage, r in res.results.items():
            logs.append(f"[{stage}] status {r.status} iterations {r.iterations} "
                        f"kkt_nnz {r.fill.get('kkt_nnz', 0)} factor_nnz {r.fill.get('factor_nnz', 0)}")
            logs.append(r.log_text())
        _write(out / f"solver_{name}.log", "\n".join(logs) + "\n")
        sim = simulate(traj, grid, params, batt, mm, fm, fits, label=name)
        reports[name] = sim
        text = sim.to_text(header) + f"optimizer_journey_time_s = {traj.journey_time:.10g}\n" \
            + f"optimizer_objective = {traj.objective:.10g}\n" + f"target_time_s = {grid.target_time:.10g}\n"
        _write(out / f"simulation_{name}.txt", text)
        _write(out / f"simulation_{name}.csv", sim.to_csv(header))
        print(f"{name}: fuel {sim.fuel_j / 1e6:.3f} MJ ({sim.fuel_kg:.4f} kg H2), "
              f"SOC drift {sim.soc_drift_pp:+.4f} pp, time {traj.journey_time:.1f} s, tight {rep.tight}")
        if not rep.tight:
            worst = max(rep.max_slack, key=rep.max_slack.get)
            print(f"{name}: relaxation {worst} slack {rep.max_slack[worst]:.3e} at sample "
                  f"{rep.worst_index[worst]} exceeds {cfg.tightness:g}", file=sys.stderr)
    if len(reports) == 2:
        cmp = compare(reports["concurrent"], reports["sequential"], params, grid)
        text = cmp.to_text(header)
        _write(out / "comparison.txt", text)
        print(text, end="")
    return EXIT_OK if tight else EXIT_SLACK


def cmd_gen_route(args) -> int:
    route = synthetic_route(args.length, args.stops, args.seed, dwell=args.dwell, origin_dwell=args.origin_dwell)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tau = args.tau if args.tau is not None else default_target_time(route, args.ds)
    cfg = RunConfig(route="route.csv", stations="stations.csv", tau=tau, ds=args.ds, seed=args.seed,
                    length_m=args.length, stops=args.stops)
    spec = f"length {args.length:g} stops {args.stops} seed {args.seed} dwell {args.dwell:g} " \
           f"origin_dwell {args.origin_dwell:g}"
    digest = hashlib.sha256(spec.encode()).hexdigest()[:16]
    write_route(route, out / "route.csv", out / "stations.csv", (f"config_hash {digest}", spec))
    _write(out / "run.toml", f"# config_hash {digest}\n# {spec}\n" + config_to_toml(cfg))
    print(f"wrote {out / 'route.csv'}, {out / 'stations.csv'} and {out / 'run.toml'} (target time {tau:g} s)")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="h2rail", description="Concurrent speed and power-split planning for a "
                                 "hydrogen hybrid train.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run configuration (TOML)")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("optimize", help="solve, audit tightness and replay through the exact models")
    common(p)
    p.add_argument("--pipeline", choices=("concurrent", "sequential", "both"))
    p.add_argument("--ds", type=float, help="nominal spatial step (m)")
    p.add_argument("--tau", type=float, help="target journey time (s)")
    p.add_argument("--seed", type=int, help="seed of the synthetic route")
    p.add_argument("--tolerance", type=float, help="solver feasibility and gap tolerance")

    p = sub.add_parser("fit", help="fit the convex surrogates and report residuals")
    common(p)

    p = sub.add_parser("gen-route", help="write a seeded synthetic route")
    p.add_argument("--length", type=float, default=10_000.0, help="route length (m)")
    p.add_argument("--stops", type=int, default=3, help="stations including both termini")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dwell", type=float, default=45.0, help="dwell at intermediate stops (s)")
    p.add_argument("--origin-dwell", type=float, default=20.0, help="dwell before departure (s)")
    p.add_argument("--tau", type=float, help="target time written to run.toml")
    p.add_argument("--ds", type=float, default=10.0)
    p.add_argument("--out", default="route")
    return ap


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    over = {}
    for flag, key in (("out", "out"), ("pipeline", "pipeline"), ("ds", "ds"), ("tau", "tau"), ("seed", "seed")):
        val = getattr(args, flag, None)
        if val is not None:
            over[key] = val
    tol = getattr(args, "tolerance", None)
    if tol is not None:
        over["feas_tol"] = over["gap_tol"] = tol
    return replace(cfg, **over)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "gen-route":
            return cmd_gen_route(args)
        cfg = _config_from_args(args)
        return cmd_fit(cfg) if args.command == "fit" else cmd_optimize(cfg)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleByConstruction as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except PipelineError as e:
        if e.result.status == INFEASIBLE:
            print(f"infeasible: {e}", file=sys.stderr)
            return EXIT_INFEASIBLE
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except FitError as e:
        print(f"fit failed: {e}", file=sys.stderr)
        return EXIT_FIT
    except (ConfigError, RouteError, ParameterError, MapRangeError, SimulationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
