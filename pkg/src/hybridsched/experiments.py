"""Experiment configuration and runners behind the ``hybridsched`` command.

A config is one JSON document.  Every block is parsed strictly: unknown keys
and out-of-range values raise :class:`ConfigError` naming the offending
field.  Layout (all blocks optional except ``experiment``)::

    {
      "experiment": "solve" | "compare" | "sweep-horizon" | "mpc",
      "seed": 0, "repetitions": 1, "output_dir": "runs",
      "system":   {"system": "cartpole", "horizon": 100, ...},
      "solver":   {"batch_size": 25, "policy": "first-improvement", "inner": "sampled", ...},
      "baselines": [{"method": "random-shooting", "samples": 25, ...}, ...],
      "oracle":   {"enabled": true, "restarts": 8, ...},
      "compare":  {"horizons": [20, 80], "budget": 25000},
      "sweep":    {"horizons": [10, 20, 40, 80], "episode_length": 100, ...},
      "mpc":      {"horizon": 20, "episode_length": 100, ...}
    }

Artifacts land in ``<output_dir>/<experiment>/<run id>/`` where the run id
is a prefix of the SHA-256 of the canonical effective config.  Nothing in
the CSV bodies depends on wall-clock time or thread count.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .baselines import BaselineConfig, ilqr_oracle, measure_gap, run_method
from .errors import ConfigError, InvalidArgument
from .io import csv_text, format_controls
from .rollout import evaluate
from .schedule import format_run_length, format_schedule, to_run_length
from .seeding import derive_seed
from .solvers import SolverConfig, run_mpc, solve_iterative
from .systems import Cartpole, DoubleIntegrator, HybridSystem, TableSystem

__all__ = [
    "SystemSpec",
    "SolverSpec",
    "OracleSpec",
    "CompareSpec",
    "SweepSpec",
    "MPCSpec",
    "ExperimentConfig",
    "RunManifest",
    "parse_config",
    "load_config",
    "run_experiment",
    "run_solve",
    "run_compare",
    "run_sweep_horizon",
    "run_mpc_experiment",
]

EXPERIMENTS = ("solve", "compare", "sweep-horizon", "mpc")
SYSTEMS = ("cartpole", "double_integrator", "table")
PHYSICAL = {
    "cartpole": (
        "cart_mass",
        "pole_mass",
        "pole_half_length",
        "gravity",
        "substeps",
        "angle_weight",
        "position_weight",
        "velocity_weight",
        "control_weight",
    ),
    "double_integrator": ("q_pos", "q_vel", "r", "qf_pos", "qf_vel"),
    "table": (),
}


@dataclass(frozen=True)
class SystemSpec:
    system: str = "cartpole"
    horizon: int = 100
    dt: float | None = None
    mode_count: int | None = None
    u_min: float | None = None
    u_max: float | None = None
    initial_state: tuple[float, ...] | None = None
    table_file: str | None = None
    physical: dict = field(default_factory=dict)

    def build(self, base_dir: Path | None = None) -> HybridSystem:
        kw: dict[str, Any] = {"horizon": self.horizon}
        for name in ("dt", "mode_count", "u_min", "u_max"):
            if getattr(self, name) is not None:
                kw[name] = getattr(self, name)
        if self.system == "table":
            path = Path(self.table_file)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            text = path.read_text()
            s0 = int(self.initial_state[0]) if self.initial_state else 0
            system = TableSystem.from_text(text, self.horizon, initial_state=s0, dt=kw.get("dt", 1.0))
            if self.mode_count is not None and self.mode_count != system.mode_count:
                raise ConfigError(
                    f"mode_count {self.mode_count} disagrees with the table ({system.mode_count} modes)",
                    "system.mode_count",
                )
            return system
        if self.initial_state is not None:
            kw["initial_state"] = np.array(self.initial_state, dtype=float)
        kw.update(self.physical)
        cls = Cartpole if self.system == "cartpole" else DoubleIntegrator
        return cls(**kw)


@dataclass(frozen=True)
class SolverSpec:
    batch_size: int = 25
    max_iterations: int = 1000
    tolerance: float = 1e-9
    policy: str = "first-improvement"
    inner: str = "sampled"
    max_evaluations: int | None = None
    eval_chunk: int = 4096

    def config(self, seed: int, workers: int = 1, max_evaluations: int | None = None) -> SolverConfig:
        return SolverConfig(
            batch_size=self.batch_size,
            max_iterations=self.max_iterations,
            tolerance=self.tolerance,
            policy=self.policy,
            seed=seed,
            max_evaluations=max_evaluations if max_evaluations is not None else self.max_evaluations,
            eval_chunk=self.eval_chunk,
            workers=workers,
        )


@dataclass(frozen=True)
class OracleSpec:
    enabled: bool = True
    restarts: int = 8
    max_iterations: int = 200
    tolerance: float = 1e-9
    seed: int = 0

    def config(self) -> BaselineConfig:
        return BaselineConfig(
            method="ilqr",
            ilqr_restarts=self.restarts,
            ilqr_max_iterations=self.max_iterations,
            ilqr_tolerance=self.tolerance,
            seed=self.seed,
        )


@dataclass(frozen=True)
class CompareSpec:
    horizons: tuple[int, ...] = ()
    budget: int = 25000


@dataclass(frozen=True)
class SweepSpec:
    horizons: tuple[int, ...] = (10, 20, 40, 80)
    episode_length: int = 100
    max_rollouts_per_step: int = 2000
    methods: tuple[str, ...] = ("hybrid", "random-shooting")


@dataclass(frozen=True)
class MPCSpec:
    horizon: int = 20
    episode_length: int = 100
    max_rollouts_per_step: int = 2000


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int = 0
    repetitions: int = 1
    output_dir: str = "runs"
    system: SystemSpec = SystemSpec()
    solver: SolverSpec = SolverSpec()
    baselines: tuple[BaselineConfig, ...] = ()
    oracle: OracleSpec = OracleSpec()
    compare: CompareSpec = CompareSpec()
    sweep: SweepSpec = SweepSpec()
    mpc: MPCSpec = MPCSpec()
    base_dir: str = "."

    def canonical(self) -> dict:
        """Effective config as plain data (``base_dir`` and ``output_dir`` excluded)."""
        data = asdict(self)
        data.pop("base_dir")
        data.pop("output_dir")
        if self.system.system == "table":
            path = Path(self.system.table_file)
            if not path.is_absolute():
                path = Path(self.base_dir) / path
            data["system"]["table_sha256"] = hashlib.sha256(path.read_bytes()).hexdigest()
            data["system"].pop("table_file")
        return data

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(blob.encode()).hexdigest()

    def build_system(self, horizon: int | None = None) -> HybridSystem:
        system = self.system.build(Path(self.base_dir))
        return system if horizon is None else system.with_horizon(horizon)


# --------------------------------------------------------------------------
# strict parsing


def _block(data: Any, path: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError("expected an object", path)
    return data


def _check_keys(data: dict, allowed, path: str) -> None:
    for key in data:
        if key not in allowed:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown field {key!r}", where)


def _int(data, key, path, default, minimum=None, allow_none=False):
    value = data.get(key, default)
    where = f"{path}.{key}" if path else key
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer", where)
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key} must be >= {minimum}", where)
    return value


def _float(data, key, path, default, positive=False, allow_none=False, minimum=None):
    value = data.get(key, default)
    where = f"{path}.{key}" if path else key
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number", where)
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{key} must be finite", where)
    if positive and not value > 0:
        raise ConfigError(f"{key} must be positive", where)
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key} must be >= {minimum}", where)
    return value


def _choice(data, key, path, default, choices):
    value = data.get(key, default)
    if value not in choices:
        raise ConfigError(f"{key} must be one of {', '.join(choices)}", f"{path}.{key}" if path else key)
    return value


def _int_list(data, key, path, default, minimum=1):
    value = data.get(key, default)
    where = f"{path}.{key}"
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{key} must be a non-empty list of integers", where)
    for v in value:
        if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
            raise ConfigError(f"{key} entries must be integers >= {minimum}", where)
    return tuple(value)


def _parse_system(data, experiment: str) -> SystemSpec:
    path = "system"
    data = _block(data, path)
    kind = _choice(data, "system", path, "cartpole", SYSTEMS)
    common = ("system", "horizon", "dt", "mode_count", "u_min", "u_max", "initial_state", "table_file")
    _check_keys(data, common + PHYSICAL[kind], path)
    horizon = _int(data, "horizon", path, 100, minimum=1)
    dt = _float(data, "dt", path, None, positive=True, allow_none=True)
    mode_count = _int(data, "mode_count", path, None, minimum=1, allow_none=True)
    if kind != "table" and mode_count is not None and mode_count < 2:
        raise ConfigError("mode_count must be >= 2 for control-level systems", f"{path}.mode_count")
    if experiment == "compare" and mode_count is not None and mode_count < 2:
        raise ConfigError("mode_count must be >= 2 to compare methods", f"{path}.mode_count")
    u_min = _float(data, "u_min", path, None, allow_none=True)
    u_max = _float(data, "u_max", path, None, allow_none=True)
    if u_min is not None and u_max is not None and not u_min < u_max:
        raise ConfigError("u_min must be smaller than u_max", f"{path}.u_min")
    x0 = data.get("initial_state")
    if x0 is not None:
        if not isinstance(x0, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in x0):
            raise ConfigError("initial_state must be an array of numbers", f"{path}.initial_state")
        x0 = tuple(float(v) for v in x0)
    table_file = data.get("table_file")
    if kind == "table" and not isinstance(table_file, str):
        raise ConfigError("table systems need a table_file path", f"{path}.table_file")
    if kind != "table" and table_file is not None:
        raise ConfigError("table_file only applies to table systems", f"{path}.table_file")
    physical = {}
    for key in PHYSICAL[kind]:
        if key in data:
            if key == "substeps":
                physical[key] = _int(data, key, path, 8, minimum=1)
            else:
                physical[key] = _float(data, key, path, None, minimum=0.0)
    return SystemSpec(kind, horizon, dt, mode_count, u_min, u_max, x0, table_file, physical)


def _parse_solver(data) -> SolverSpec:
    path = "solver"
    data = _block(data, path)
    _check_keys(data, [f.name for f in fields(SolverSpec)], path)
    return SolverSpec(
        batch_size=_int(data, "batch_size", path, 25, minimum=1),
        max_iterations=_int(data, "max_iterations", path, 1000, minimum=0),
        tolerance=_float(data, "tolerance", path, 1e-9, minimum=0.0),
        policy=_choice(data, "policy", path, "first-improvement", ("first-improvement", "best-of-batch")),
        inner=_choice(data, "inner", path, "sampled", ("sampled", "exhaustive")),
        max_evaluations=_int(data, "max_evaluations", path, None, minimum=1, allow_none=True),
        eval_chunk=_int(data, "eval_chunk", path, 4096, minimum=1),
    )


BASELINE_METHODS = ("hybrid", "random-shooting", "cem", "mppi")


def _parse_baseline(data, i: int) -> BaselineConfig:
    path = f"baselines[{i}]"
    data = _block(data, path)
    allowed = ("method", "samples", "iterations", "resample_prob", "elite_fraction", "smoothing", "temperature", "noise")
    _check_keys(data, allowed, path)
    method = _choice(data, "method", path, None, BASELINE_METHODS)
    kw = dict(
        method=method,
        samples=_int(data, "samples", path, 25, minimum=1),
        iterations=_int(data, "iterations", path, None, minimum=0, allow_none=True),
        resample_prob=_float(data, "resample_prob", path, 0.1, positive=True),
        elite_fraction=_float(data, "elite_fraction", path, 0.1, positive=True),
        smoothing=_float(data, "smoothing", path, 1e-3, minimum=0.0),
        temperature=_float(data, "temperature", path, 0.1, positive=True),
        noise=_float(data, "noise", path, 1.0, positive=True),
    )
    if kw["elite_fraction"] > 1:
        raise ConfigError("elite_fraction must lie in (0, 1]", f"{path}.elite_fraction")
    if kw["resample_prob"] > 1:
        raise ConfigError("resample_prob must lie in (0, 1]", f"{path}.resample_prob")
    return BaselineConfig(**kw)


def _parse_oracle(data) -> OracleSpec:
    path = "oracle"
    data = _block(data, path)
    _check_keys(data, [f.name for f in fields(OracleSpec)], path)
    enabled = data.get("enabled", True)
    if not isinstance(enabled, bool):
        raise ConfigError("enabled must be true or false", f"{path}.enabled")
    return OracleSpec(
        enabled=enabled,
        restarts=_int(data, "restarts", path, 8, minimum=0),
        max_iterations=_int(data, "max_iterations", path, 200, minimum=1),
        tolerance=_float(data, "tolerance", path, 1e-9, minimum=0.0),
        seed=_int(data, "seed", path, 0, minimum=0),
    )


def parse_config(data: Any, base_dir: str | Path = ".") -> ExperimentConfig:
    """Validate already-decoded JSON data into an :class:`ExperimentConfig`."""
    data = _block(data, "")
    top = ("experiment", "seed", "repetitions", "output_dir", "system", "solver", "baselines", "oracle", "compare", "sweep", "mpc")
    _check_keys(data, top, "")
    if "experiment" not in data:
        raise ConfigError("missing required field", "experiment")
    experiment = _choice(data, "experiment", "", None, EXPERIMENTS)
    seed = _int(data, "seed", "", 0, minimum=0)
    repetitions = _int(data, "repetitions", "", 1, minimum=1)
    output_dir = data.get("output_dir", "runs")
    if not isinstance(output_dir, str):
        raise ConfigError("output_dir must be a string", "output_dir")
    system = _parse_system(data.get("system", {}), experiment)
    solver = _parse_solver(data.get("solver", {}))
    raw_baselines = data.get("baselines", [])
    if not isinstance(raw_baselines, list):
        raise ConfigError("baselines must be a list", "baselines")
    baselines = tuple(_parse_baseline(b, i) for i, b in enumerate(raw_baselines))
    oracle = _parse_oracle(data.get("oracle", {}))

    compare = _block(data.get("compare", {}), "compare")
    _check_keys(compare, ("horizons", "budget"), "compare")
    compare = CompareSpec(
        horizons=_int_list(compare, "horizons", "compare", (system.horizon,)),
        budget=_int(compare, "budget", "compare", 25000, minimum=1),
    )
    sweep = _block(data.get("sweep", {}), "sweep")
    _check_keys(sweep, [f.name for f in fields(SweepSpec)], "sweep")
    methods = sweep.get("methods", list(SweepSpec.methods))
    if not isinstance(methods, list) or not methods or any(m not in ("hybrid", "random-shooting", "cem") for m in methods):
        raise ConfigError("methods must list hybrid, random-shooting and/or cem", "sweep.methods")
    sweep = SweepSpec(
        horizons=_int_list(sweep, "horizons", "sweep", SweepSpec.horizons),
        episode_length=_int(sweep, "episode_length", "sweep", 100, minimum=1),
        max_rollouts_per_step=_int(sweep, "max_rollouts_per_step", "sweep", 2000, minimum=1),
        methods=tuple(methods),
    )
    mpc = _block(data.get("mpc", {}), "mpc")
    _check_keys(mpc, [f.name for f in fields(MPCSpec)], "mpc")
    mpc = MPCSpec(
        horizon=_int(mpc, "horizon", "mpc", 20, minimum=1),
        episode_length=_int(mpc, "episode_length", "mpc", 100, minimum=1),
        max_rollouts_per_step=_int(mpc, "max_rollouts_per_step", "mpc", 2000, minimum=1),
    )

    if experiment == "compare":
        if not baselines:
            raise ConfigError("compare needs at least one baseline", "baselines")
        if system.system == "table" and any(b.method == "mppi" for b in baselines):
            raise ConfigError("mppi needs a continuous-control system", "baselines")
        if system.system == "table" and oracle.enabled:
            raise ConfigError("the iLQR oracle needs a continuous-control system", "oracle.enabled")
    cfg = ExperimentConfig(
        experiment, seed, repetitions, output_dir, system, solver, baselines, oracle, compare, sweep, mpc, str(base_dir)
    )
    try:
        cfg.build_system()
    except OSError as exc:
        raise ConfigError(f"cannot read table file: {exc}", "system.table_file") from exc
    except InvalidArgument as exc:
        raise ConfigError(str(exc), "system") from exc
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, f"{path}:{exc.lineno}:{exc.colno}") from exc
    return parse_config(data, base_dir=path.parent)


def apply_overrides(cfg: ExperimentConfig, seed: int | None = None, budget: int | None = None) -> ExperimentConfig:
    """Fold ``--seed`` / ``--budget`` into the config so they enter the run hash."""
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if budget is not None:
        if budget < 1:
            raise ConfigError("budget must be >= 1", "--budget")
        cfg = replace(
            cfg,
            solver=replace(cfg.solver, max_evaluations=budget) if cfg.experiment == "solve" else cfg.solver,
            compare=replace(cfg.compare, budget=budget),
            sweep=replace(cfg.sweep, max_rollouts_per_step=budget),
            mpc=replace(cfg.mpc, max_rollouts_per_step=budget),
        )
    return cfg


# --------------------------------------------------------------------------
# runners


@dataclass
class RunManifest:
    config_hash: str
    files: dict[str, int | None]
    seeds: list[int]
    version: str = __version__
    flags: dict = field(default_factory=dict)

    def to_json(self) -> str:
        data = {
            "config_hash": self.config_hash,
            "files": [{"name": n, "rows": r} for n, r in sorted(self.files.items())],
            "seeds": self.seeds,
            "version": self.version,
            "flags": self.flags,
        }
        return json.dumps(data, indent=2, sort_keys=True) + "\n"


class _Writer:
    def __init__(self, directory: Path):
        self.directory = directory
        self.files: dict[str, int | None] = {}
        directory.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str, rows: int | None = None) -> None:
        (self.directory / name).write_text(text, encoding="utf-8", newline="\n")
        if rows is None:
            if name.endswith(".json"):
                rows = None  # not a tabular file
            else:
                rows = max(0, text.count("\n") - 1) if name.endswith(".csv") else text.count("\n")
        self.files[name] = rows


def run_directory(cfg: ExperimentConfig, out: str | Path | None = None) -> Path:
    root = Path(out) if out is not None else Path(cfg.base_dir) / cfg.output_dir
    return root / cfg.experiment / cfg.config_hash()[:12]


def _map(fn, items, threads: int):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _trajectory_csv(system: HybridSystem, schedule) -> str:
    rec = evaluate(system, schedule)
    names = system.state_names or tuple(f"x{i}" for i in range(system.state_dim))
    rows = []
    for k, x in enumerate(rec.states):
        mode = int(rec.modes[k]) if k < system.horizon else None
        cost = rec.stage_costs[k] if k < rec.stage_costs.size else None
        rows.append((k, *x.tolist(), mode, cost))
    return csv_text(("k", *names, "mode", "stage_cost"), rows)


def run_solve(cfg: ExperimentConfig, out=None, threads: int = 1) -> tuple[Path, RunManifest]:
    system = cfg.build_system()
    writer = _Writer(run_directory(cfg, out))
    seeds = [derive_seed(cfg.seed, rep) for rep in range(cfg.repetitions)]

    def one(seed):
        return solve_iterative(system, None, cfg.solver.config(seed), cfg.solver.inner)

    reports = _map(one, seeds, threads)
    for rep, report in enumerate(reports):
        tag = "" if cfg.repetitions == 1 else f"_rep{rep}"
        writer.write(f"solve_report{tag}.csv", report.to_csv())
        writer.write(f"schedule{tag}.txt", format_schedule(report.final_schedule) + "\n")
        writer.write(f"schedule_rle{tag}.txt", format_run_length(to_run_length(report.final_schedule)))
        writer.write(f"trajectory{tag}.csv", _trajectory_csv(system, report.final_schedule))
    flags = {"termination": [r.termination for r in reports]}
    return _finish(cfg, writer, seeds, flags)


COMPARE_HEADER = ("method", "horizon", "budget", "seed", "final_cost", "oracle_cost", "normalized_gap")


def run_compare(cfg: ExperimentConfig, out=None, threads: int = 1) -> tuple[Path, RunManifest]:
    writer = _Writer(run_directory(cfg, out))
    budget = cfg.compare.budget
    seeds = [derive_seed(cfg.seed, rep) for rep in range(cfg.repetitions)]
    rows, summary = [], []
    for H in cfg.compare.horizons:
        system = cfg.build_system(H)
        oracle = ilqr_oracle(system, cfg.oracle.config()) if cfg.oracle.enabled else None
        if oracle is not None:
            writer.write(f"oracle_controls_H{H}.txt", format_controls(oracle.solution[:, 0]) + "\n")

        def one(job):
            b, seed = job
            bcfg = replace(b, seed=seed, budget=budget)
            return run_method(b.method, system, bcfg, cfg.solver.config(seed))

        jobs = [(b, s) for b in cfg.baselines for s in seeds]
        results = _map(one, jobs, threads)
        for b in cfg.baselines:
            costs, gaps = [], []
            for (jb, seed), res in zip(jobs, results):
                if jb is not b:
                    continue
                gap = measure_gap(res, oracle, H).normalized_gap if oracle is not None else None
                rows.append((b.method, H, budget, seed, res.cost, oracle.cost if oracle else None, gap))
                costs.append(res.cost)
                gaps.append(gap)
            mean_gap = float(np.mean(gaps)) if oracle is not None else None
            std_gap = float(np.std(gaps)) if oracle is not None else None
            rows.append((b.method, H, budget, "mean", float(np.mean(costs)), oracle.cost if oracle else None, mean_gap))
            summary.append(
                (b.method, H, budget, len(costs), float(np.mean(costs)), float(np.std(costs)), mean_gap, std_gap)
            )
    writer.write("compare.csv", csv_text(COMPARE_HEADER, rows))
    writer.write(
        "compare_summary.csv",
        csv_text(("method", "horizon", "budget", "n", "mean_cost", "std_cost", "mean_gap", "std_gap"), summary),
    )
    return _finish(cfg, writer, seeds)


def _mpc_planner(method: str, budget: int, solver: SolverSpec):
    if method == "hybrid":
        return None
    base = BaselineConfig(method=method, budget=budget)

    def planner(model, warm, seed):
        res = run_method(method, model, replace(base, seed=seed), initial=warm)
        return res.solution, res.cost, res.evaluations

    return planner


def run_sweep_horizon(cfg: ExperimentConfig, out=None, threads: int = 1) -> tuple[Path, RunManifest]:
    writer = _Writer(run_directory(cfg, out))
    system = cfg.build_system()
    sweep = cfg.sweep
    seeds = [derive_seed(cfg.seed, rep) for rep in range(cfg.repetitions)]
    jobs = [(method, H, seed) for method in sweep.methods for H in sweep.horizons for seed in seeds]

    def one(job):
        method, H, seed = job
        solver = cfg.solver.config(seed, max_evaluations=sweep.max_rollouts_per_step)
        planner = _mpc_planner(method, sweep.max_rollouts_per_step, cfg.solver)
        solver = replace(solver, seed=seed)
        return run_mpc(system, H, sweep.episode_length, solver, cfg.solver.inner, planner)

    results = _map(one, jobs, threads)
    rows = [(m, H, seed, res.cumulative_cost) for (m, H, seed), res in zip(jobs, results)]
    writer.write("sweep.csv", csv_text(("method", "H", "seed", "cumulative_cost"), rows))

    means: dict[tuple[str, int], float] = {}
    summary = []
    for method in sweep.methods:
        for H in sweep.horizons:
            vals = [c for m, h, _, c in rows if m == method and h == H]
            means[(method, H)] = float(np.mean(vals))
            summary.append((method, H, len(vals), float(np.mean(vals)), float(np.std(vals))))
    writer.write("sweep_summary.csv", csv_text(("method", "H", "n", "mean_cost", "std_cost"), summary))

    trends = []
    long = [H for H in sweep.horizons if H >= 20]
    for method in sweep.methods:
        seq = [means[(method, H)] for H in long]
        non_increasing = all(b <= a for a, b in zip(seq, seq[1:]))
        trends.append((method, "non_increasing_from_H20", int(non_increasing)))
        if 20 in sweep.horizons and 80 in sweep.horizons:
            trends.append((method, "H80_exceeds_H20", int(means[(method, 80)] > means[(method, 20)])))
    writer.write("sweep_trends.csv", csv_text(("method", "trend", "flag"), trends))
    flagged = sum(len(r.flagged_steps) for r in results)
    return _finish(cfg, writer, seeds, {"flagged_steps": flagged})


def run_mpc_experiment(cfg: ExperimentConfig, out=None, threads: int = 1) -> tuple[Path, RunManifest]:
    writer = _Writer(run_directory(cfg, out))
    system = cfg.build_system()
    seeds = [derive_seed(cfg.seed, rep) for rep in range(cfg.repetitions)]
    spec = cfg.mpc

    def one(seed):
        solver = cfg.solver.config(seed, max_evaluations=spec.max_rollouts_per_step)
        return run_mpc(system, spec.horizon, spec.episode_length, solver, cfg.solver.inner)

    results = _map(one, seeds, threads)
    plant = system.with_horizon(spec.episode_length)
    summary = []
    for rep, (seed, res) in enumerate(zip(seeds, results)):
        tag = "" if cfg.repetitions == 1 else f"_rep{rep}"
        steps = [
            (t, int(res.executed[t]), int(t in res.flagged_steps), res.evaluations[t])
            for t in range(spec.episode_length)
        ]
        writer.write(f"mpc_steps{tag}.csv", csv_text(("k", "mode", "flagged", "evaluations"), steps))
        writer.write(f"mpc_trajectory{tag}.csv", _trajectory_csv(plant, res.executed))
        summary.append((seed, spec.horizon, spec.episode_length, res.cumulative_cost, len(res.flagged_steps)))
    writer.write(
        "mpc_summary.csv", csv_text(("seed", "H", "episode_length", "cumulative_cost", "flagged_steps"), summary)
    )
    return _finish(cfg, writer, seeds)


def _finish(cfg, writer: _Writer, seeds, flags=None) -> tuple[Path, RunManifest]:
    writer.write("config.json", json.dumps(cfg.canonical(), indent=2, sort_keys=True, default=list) + "\n")
    manifest = RunManifest(cfg.config_hash(), dict(writer.files), list(seeds), flags=flags or {})
    manifest.files["manifest.json"] = None
    (writer.directory / "manifest.json").write_text(manifest.to_json(), encoding="utf-8", newline="\n")
    return writer.directory, manifest


RUNNERS = {
    "solve": run_solve,
    "compare": run_compare,
    "sweep-horizon": run_sweep_horizon,
    "mpc": run_mpc_experiment,
}


def run_experiment(cfg: ExperimentConfig, out=None, threads: int = 1) -> tuple[Path, RunManifest]:
    return RUNNERS[cfg.experiment](cfg, out, threads)
