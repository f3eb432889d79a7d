"""Experiment configuration, orchestration and output files.

A run goes generation -> decomposition -> tests and writes

* ``reports.json``: every :class:`~honest_times.stats.StatReport` plus the
  resolved configuration;
* ``samples.csv``: one row per path, columns :data:`CSV_COLUMNS`;
* ``plotdata/tail.csv`` and ``plotdata/k_cdf.csv`` (when ``plotdata`` is
  emitted): the empirical tail of the supremum against ``1/x`` and the
  empirical CDF of ``K_rho`` against the diagonal.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

from . import stats
from .azema import decompose
from .engine import Probes, complete_tails, simulate_summaries
from .generators import (
    DEFAULT_GRIDS,
    Family,
    GeneratorSpec,
    generate,
)
from .paths import TimeGrid, rho_min

log = logging.getLogger(__name__)

KNOWN_TESTS = (
    "doob_tail",
    "ks_uniform",
    "avoidance",
    "martingale_orthogonality",
    "time_change",
    "uniqueness_and_z_one",
    "counterexample_unattained",
)
# Tests that need a time of maximum that is attained.
_CONTINUOUS_ONLY = {"ks_uniform", "avoidance", "martingale_orthogonality", "time_change"}
KNOWN_EMITS = ("csv", "json", "plotdata")

CSV_COLUMNS = (
    "path_index",
    "terminal_sup",
    "completed_sup",
    "rho_min_time",
    "rho_min_infinite",
    "k_at_rho",
    "a_horizon",
    "absorbed",
)

EXIT_OK = 0
EXIT_TEST_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_IO_ERROR = 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    family: str = "geometric_brownian"
    sigma: float = 1.0
    step: Optional[float] = None
    horizon: Optional[float] = None
    seed: int = 0
    path_count: int = 1000
    tests: tuple = ("doob_tail",)
    refinement_steps: Optional[tuple] = None
    output_dir: str = "out"
    emit: tuple = ("csv", "json")
    tail_completion: bool = False
    bridge_max: bool = False
    levels: tuple = (2.0, 4.0, 8.0)
    checkpoints: tuple = (1.0, 4.0, 16.0)
    eta_us: tuple = (0.25, 0.5, 0.75)
    avoidance_time: float = 1.0
    avoidance_level: float = 1.5
    alpha: float = 0.01
    n_sigma: float = 4.0
    workers: int = 1

    def resolved_step(self) -> float:
        if self.step is not None:
            return float(self.step)
        return DEFAULT_GRIDS[Family(self.family)][0]

    def resolved_horizon(self) -> float:
        if self.horizon is not None:
            return float(self.horizon)
        return DEFAULT_GRIDS[Family(self.family)][1]

    def resolved_refinement(self) -> tuple:
        if self.refinement_steps:
            return tuple(float(s) for s in self.refinement_steps)
        h = self.resolved_step()
        return (16 * h, 4 * h, h)

    @property
    def generator(self) -> GeneratorSpec:
        return GeneratorSpec(
            family=Family(self.family),
            grid=TimeGrid.from_horizon(self.resolved_step(), self.resolved_horizon()),
            seed=int(self.seed),
            sigma=float(self.sigma),
            tail_completion=bool(self.tail_completion),
            bridge_max=bool(self.bridge_max),
        )


_TUPLE_FIELDS = {"tests", "refinement_steps", "emit", "levels", "checkpoints", "eta_us"}


def _coerce(name: str, value):
    if value is None:
        return None
    if name in _TUPLE_FIELDS:
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        elif not isinstance(value, (list, tuple)):
            value = [value]
        if name in ("tests", "emit"):
            return tuple(str(v) for v in value)
        return tuple(float(v) for v in value)
    kind = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}[name]
    if kind == "bool" and isinstance(value, str):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if "float" in kind:
        return float(value)
    if kind == "int":
        return int(value)
    if kind == "bool":
        return bool(value)
    return str(value)


def config_from_mapping(values: dict) -> ExperimentConfig:
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    try:
        return ExperimentConfig(**{k: _coerce(k, v) for k, v in values.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config_file(path: str) -> dict:
    """Read a flat ``key: value`` YAML file."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a flat mapping of keys to values")
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError(f"{path}: key {key!r} is nested; the config format is flat")
    return data


def build_config(file_values: Optional[dict] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Merge defaults < file values < overrides (``None`` overrides are ignored)."""
    merged = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_mapping(merged)


def validate(config: ExperimentConfig) -> list:
    """All problems that would stop ``config`` from running; empty when runnable."""
    out = []
    try:
        family = Family(config.family)
    except ValueError:
        out.append(f"unknown family {config.family!r}; expected one of {[f.value for f in Family]}")
        family = None
    if not config.sigma > 0:
        out.append(f"sigma must be positive, got {config.sigma}")
    if not 0 <= config.seed < 2**64:
        out.append(f"seed must fit in 64 unsigned bits, got {config.seed}")
    if config.path_count < 1:
        out.append(f"path_count must be at least 1, got {config.path_count}")
    if config.workers < 1:
        out.append(f"workers must be at least 1, got {config.workers}")
    for name in config.tests:
        if name not in KNOWN_TESTS:
            out.append(f"unknown test {name!r}; expected one of {list(KNOWN_TESTS)}")
    for name in config.emit:
        if name not in KNOWN_EMITS:
            out.append(f"unknown output {name!r}; expected one of {list(KNOWN_EMITS)}")
    if any(not x > 1 for x in config.levels):
        out.append("tail levels must all exceed 1")
    if any(not 0 <= u < 1 for u in config.eta_us):
        out.append("eta levels u must lie in [0, 1)")
    if not config.avoidance_level > 0:
        out.append("avoidance_level must be positive")
    if not 0 < config.alpha < 1:
        out.append("alpha must lie in (0, 1)")
    if family is None:
        return out

    grid = None
    try:
        grid = TimeGrid.from_horizon(config.resolved_step(), config.resolved_horizon())
    except ValueError as exc:
        out.append(f"invalid grid: {exc}")
    if grid is not None:
        if "martingale_orthogonality" in config.tests and any(t < 0 or t > grid.horizon for t in config.checkpoints):
            out.append(f"checkpoints must lie in [0, {grid.horizon}]")
        if "avoidance" in config.tests and not 0 <= config.avoidance_time <= grid.horizon:
            out.append(f"avoidance_time must lie in [0, {grid.horizon}]")
        steps = config.resolved_refinement() if "avoidance" in config.tests or config.refinement_steps else ()
        if any(b >= a for a, b in zip(steps, steps[1:])):
            out.append("refinement steps must be strictly decreasing")
        for s in steps:
            ratio = s / grid.step
            r = round(ratio)
            if abs(ratio - r) > 1e-9 or r < 1 or r & (r - 1) or (grid.point_count - 1) % r:
                out.append(f"refinement step {s} is not a power-of-two multiple of the grid step dividing the horizon")

    if not family.continuous:
        for name in config.tests:
            if name in _CONTINUOUS_ONLY:
                out.append(f"test {name!r} needs an attained time of maximum; not available for {family.value}")
        if config.tail_completion:
            out.append("tail completion does not apply to the jump counterexample")
        if config.bridge_max:
            out.append("bridge maxima do not apply to the jump counterexample")
    elif "counterexample_unattained" in config.tests:
        out.append("counterexample_unattained only applies to the exp_jump family")
    return out


@dataclass
class RunResult:
    reports: list
    exit_code: int
    files: list = field(default_factory=list)
    rows: Optional[dict] = None

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.reports)


def _strides(config: ExperimentConfig, step: float) -> tuple:
    strides = {1}
    if "avoidance" in config.tests or config.refinement_steps:
        strides.update(int(round(s / step)) for s in config.resolved_refinement())
    return tuple(sorted(strides))


def _continuous_run(config: ExperimentConfig, spec: GeneratorSpec) -> tuple:
    grid = spec.grid
    step = grid.step
    n = config.path_count
    probes = Probes(
        strides=_strides(config, step),
        checkpoint_times=tuple(config.checkpoints) if "martingale_orthogonality" in config.tests else (),
        stop_levels=(config.avoidance_level,),
        eta_us=tuple(config.eta_us),
    )
    log.info("simulating %d %s paths on %d grid points", n, spec.family.value, grid.point_count)
    summary = simulate_summaries(spec, n, probes, workers=config.workers)
    bridge = spec.bridge_max
    fine = summary.stride_position(1)
    base = summary.bridge_sup if bridge else summary.grid_sup[:, fine]
    if config.tail_completion:
        tails = complete_tails(summary, use_bridge=bridge)
        completed, beyond = tails.completed, tails.beyond_horizon
    else:
        completed, beyond = base.copy(), np.zeros(n, dtype=bool)
    rho_idx = summary.first[:, fine]
    # A maximum completed beyond the horizon has a finite but unobserved time.
    rho_time = (summary.bridge_rho_index if bridge else rho_idx) * step
    rho_time = np.where(beyond, np.nan, rho_time)
    rows = dict(
        path_index=np.arange(n),
        terminal_sup=base,
        completed_sup=completed,
        rho_min_time=rho_time,
        rho_min_infinite=np.zeros(n, dtype=bool),
        k_at_rho=1.0 - 1.0 / completed,
        a_horizon=summary.bridge_a_end if bridge else summary.a_end,
        absorbed=summary.absorbed_index >= 0,
    )

    reports = []
    for name in config.tests:
        if name == "doob_tail":
            r = stats.doob_tail_test(base, config.levels, config.n_sigma, step=step)
            r.metadata.update(bridge_max=bridge)
            reports.append(r)
        elif name == "ks_uniform":
            r = stats.ks_uniform_test(rows["k_at_rho"], config.alpha, tail_completion_used=config.tail_completion)
            r.metadata.update(bridge_max=bridge)
            reports.append(r)
        elif name == "avoidance":
            steps = config.resolved_refinement()
            strides = [int(round(s / step)) for s in steps]
            rhos = [summary.first[:, summary.stride_position(s)] for s in strides]
            det = [
                np.full(n, TimeGrid(step * s, (grid.point_count - 1) // s + 1).index_at_or_after(config.avoidance_time))
                for s in strides
            ]
            hit = [summary.stop_hit[:, summary.stride_position(s), 0] for s in strides]
            for label, taus in ((f"deterministic({config.avoidance_time:g})", det), (f"level_hit({config.avoidance_level:g})", hit)):
                r = stats.avoidance_test(rhos, taus, steps)
                r.metadata.update(stopping_time=label)
                reports.append(r)
        elif name == "martingale_orthogonality":
            cps = summary.checkpoint_indices
            rho_ref = summary.bridge_rho_index if bridge else rho_idx
            table = stats.CheckpointTable(
                times=np.asarray(config.checkpoints, dtype=float),
                value=summary.cp_value,
                sup=summary.cp_bridge_sup if bridge else summary.cp_sup,
                a=summary.cp_bridge_a if bridge else summary.cp_a,
                rho_after=(rho_ref[:, None] > cps[None, :]) | beyond[:, None],
            )
            r = stats.martingale_orthogonality_test(
                table, n_sigma=config.n_sigma, horizon=grid.horizon, tail_completion_used=config.tail_completion
            )
            r.metadata.update(bridge_max=bridge)
            reports.append(r)
        elif name == "time_change":
            reports.append(
                stats.time_change_test(
                    eta_values_with_completion(summary.eta_value, config.eta_us, completed),
                    config.eta_us,
                    config.n_sigma,
                    identity_lhs=summary.tc_lhs,
                    identity_rhs=summary.tc_rhs,
                    tail_completion_used=config.tail_completion,
                )
            )
        elif name == "uniqueness_and_z_one":
            counts = _stream_counts(spec, n, beyond if config.tail_completion else None)
            bad = counts["rho_min_ne_rho_max"] + counts["unattained"] + counts["z_rho_ne_one"]
            reports.append(
                stats.StatReport("uniqueness_and_z_one", n, float(bad), 0.0, bad == 0, config.tail_completion, counts)
            )
    return reports, rows


def eta_values_with_completion(eta_grid: np.ndarray, us, completed_sup: np.ndarray) -> np.ndarray:
    """``L_{eta_u} 1{eta_u < inf}`` using the grid value when ``eta_u`` falls on the grid.

    When the level ``1/(1-u)`` is first reached after the horizon (the
    completed supremum exceeds it but the grid never did) the continuous
    path crosses the level exactly, so the stopped value is the level.
    """
    out = np.array(eta_grid, dtype=float, copy=True)
    for j, u in enumerate(us):
        level = 1.0 / (1.0 - u)
        late = (out[:, j] == 0) & (completed_sup >= level)
        out[late, j] = level
    return out


def _stream_counts(spec: GeneratorSpec, n: int, completed=None) -> dict:
    # Regenerates the paths one at a time so full arrays are never held together.
    counts = dict(paths=0, rho_min_ne_rho_max=0, unattained=0, z_rho_ne_one=0)
    for i in range(n):
        path = generate(spec, i)
        flag = None if completed is None else [bool(completed[i])]
        c = stats.uniqueness_counts([path], [decompose(path)], flag)
        for key in counts:
            counts[key] += c[key]
    return counts


def _jump_run(config: ExperimentConfig, spec: GeneratorSpec) -> tuple:
    n = config.path_count
    sups = np.empty(n)
    a_end = np.empty(n)
    absorbed = np.zeros(n, dtype=bool)
    rho_t = np.empty(n)
    counts = dict(paths=0, rho_min_ne_rho_max=0, unattained=0, z_rho_ne_one=0)
    want_counts = {"uniqueness_and_z_one", "counterexample_unattained"} & set(config.tests)
    for i in range(n):
        path = generate(spec, i)
        bundle = decompose(path)
        sup = bundle.sup
        sups[i] = sup.terminal
        a_end[i] = bundle.a[-1]
        absorbed[i] = path.absorbed
        r = rho_min(path, sup)
        rho_t[i] = r.exact_time
        if want_counts:
            c = stats.uniqueness_counts([path], [bundle])
            for key in counts:
                counts[key] += c[key]
    rows = dict(
        path_index=np.arange(n),
        terminal_sup=sups,
        completed_sup=sups,
        rho_min_time=rho_t,
        rho_min_infinite=np.isinf(rho_t),
        k_at_rho=np.where(np.isinf(rho_t), np.nan, 1.0 - 1.0 / sups),
        a_horizon=a_end,
        absorbed=absorbed,
    )
    reports = []
    for name in config.tests:
        if name == "doob_tail":
            r = stats.doob_tail_test(sups, config.levels, config.n_sigma)
            r.metadata.update(analytic_sup=True)
            reports.append(r)
        elif name in ("uniqueness_and_z_one", "counterexample_unattained"):
            attained = counts["paths"] - counts["unattained"]
            r = stats.StatReport(
                "counterexample_unattained", n, float(attained), 0.0, attained == 0, False,
                dict(counts, requested_as=name),
            )
            reports.append(r)
    return reports, rows


def _write_outputs(config: ExperimentConfig, reports: list, rows: dict) -> list:
    out_dir = config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    files = []
    if "json" in config.emit:
        path = os.path.join(out_dir, "reports.json")
        payload = dict(
            seed=int(config.seed),
            config=stats._jsonable(dataclasses.asdict(config)),
            all_passed=all(r.passed for r in reports),
            reports=[r.to_dict() for r in reports],
        )
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
        files.append(path)
    if "csv" in config.emit:
        path = os.path.join(out_dir, "samples.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for i in range(len(rows["path_index"])):
                writer.writerow([_cell(rows[c][i]) for c in CSV_COLUMNS])
        files.append(path)
    if "plotdata" in config.emit:
        plot_dir = os.path.join(out_dir, "plotdata")
        os.makedirs(plot_dir, exist_ok=True)
        sups = np.asarray(rows["terminal_sup"])
        xs = np.geomspace(1.0, 100.0, 41)
        path = os.path.join(plot_dir, "tail.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("x", "empirical_tail", "doob_tail"))
            for x in xs:
                writer.writerow((repr(float(x)), repr(float((sups > x).mean())), repr(1.0 / x)))
        files.append(path)
        k = np.asarray(rows["k_at_rho"], dtype=float)
        k = k[np.isfinite(k)]
        path = os.path.join(plot_dir, "k_cdf.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("u", "empirical_cdf", "uniform_cdf"))
            for u in np.linspace(0.0, 1.0, 101):
                emp = float((k <= u).mean()) if k.size else math.nan
                writer.writerow((repr(float(u)), repr(emp), repr(float(u))))
        files.append(path)
    return files


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    return repr(float(v))


def run(config: ExperimentConfig) -> RunResult:
    """Execute a configuration; exit code 0 all pass, 1 a test failed, 2 bad config, 3 I/O error."""
    problems = validate(config)
    if problems:
        for p in problems:
            log.error("config: %s", p)
        return RunResult([], EXIT_CONFIG_ERROR)
    spec = config.generator
    if spec.family.continuous:
        reports, rows = _continuous_run(config, spec)
    else:
        reports, rows = _jump_run(config, spec)
    try:
        files = _write_outputs(config, reports, rows)
    except OSError as exc:
        log.error("cannot write outputs to %s: %s", config.output_dir, exc)
        return RunResult(reports, EXIT_IO_ERROR, rows=rows)
    code = EXIT_OK if all(r.passed for r in reports) else EXIT_TEST_FAILURE
    return RunResult(reports, code, files, rows)


def counterexample_demo_config(**overrides) -> ExperimentConfig:
    values = dict(
        family=Family.EXP_JUMP_COUNTEREXAMPLE.value,
        path_count=10_000,
        tests=("doob_tail", "counterexample_unattained"),
        output_dir="counterexample_out",
    )
    values.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_mapping(values)
