"""Command-line benchmark harness.

Subcommands:

* ``run``       - Monte Carlo repetitions of an estimator on synthetic data,
                  one per-step record CSV per run.
* ``mcvar``     - time-averaged across-run variance of the parameter columns
                  of previously written run files.
* ``time``      - wall-clock milliseconds per step over an algorithm/particle
                  grid.
* ``estimate``  - single-pass estimation on observations read from a CSV.
* ``simulate``  - write a synthetic trajectory CSV.

Configuration comes from scenario presets, overridden by an optional JSON
config file, ``--set key=value`` pairs, and explicit flags, in that order.
All outputs are reproducible byte for byte from (config, seed).  The
environment variable ``SWITCHEM_THREADS`` caps run-level parallelism.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .model import FeasibilityConfig
from .online_em import (ALGORITHMS, EmConfig, StepSchedule, record_columns, run)
from .rbpf import FilterCollapseError
from .simulate import (Scenario, get_scenario, read_observations, simulate,
                       write_trajectory)


@dataclass
class ExperimentConfig:
    """Resolved settings of one experiment."""

    scenario: str = "benchmark"
    model_file: str = ""
    algorithm: str = "rbpf_fs"
    particles: int = 150
    steps: int = 1000
    runs: int = 1
    seed: int = 0
    out: str = "out"
    exponent: float = 0.7
    burn_in: int = 20
    update_period: int = 1
    resample_threshold: float = 0.5
    var_floor: float = 1e-6
    var_cap: float = math.inf
    tpm_floor: float = 1e-6
    occupancy_floor: float = 1e-8
    data_mode: str = "fixed"      # "fixed": all runs share one data batch
    data_seed: int = -1           # -1: use seed

    def __post_init__(self):
        if self.particles < 1 or self.steps < 0 or self.runs < 1:
            raise ValueError("particles/steps/runs out of range")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.data_mode not in ("fixed", "fresh"):
            raise ValueError("data_mode must be 'fixed' or 'fresh'")

    def em_config(self) -> EmConfig:
        return EmConfig(
            schedule=StepSchedule(self.exponent),
            burn_in=self.burn_in,
            update_period=self.update_period,
            feasibility=FeasibilityConfig(self.var_floor, self.var_cap,
                                          self.tpm_floor, self.occupancy_floor),
            resample_threshold=self.resample_threshold,
        )


def _coerce(value: str):
    try:
        return json.loads(value)
    except (json.JSONDecodeError, ValueError):
        return value


def build_config(args) -> tuple:
    """Merge preset < config file < --set < explicit flags; returns
    (ExperimentConfig, Scenario)."""
    file_cfg = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            file_cfg = json.load(fh)
    sets = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        sets[key.strip()] = _coerce(val.strip())

    scenario = (getattr(args, "scenario", None) or sets.get("scenario")
                or file_cfg.get("scenario") or "benchmark")
    model_file = (getattr(args, "model_file", None) or sets.get("model_file")
                  or file_cfg.get("model_file") or "")
    scen = get_scenario(scenario, model_file or None)

    cfg = {"scenario": scenario, "model_file": model_file}
    cfg.update(scen.defaults)
    cfg.update({k: v for k, v in file_cfg.items() if k in ExperimentConfig.__dataclass_fields__})
    cfg.update({k: v for k, v in sets.items() if k in ExperimentConfig.__dataclass_fields__})
    for flag in ("algorithm", "particles", "steps", "runs", "seed", "out"):
        val = getattr(args, flag, None)
        if val is not None:
            cfg[flag] = val
    return ExperimentConfig(**cfg), scen


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _write_records(path: Path, model, records) -> int:
    """Stream records to CSV; on collapse write the trailer comment and
    return the collapse time (0 means no collapse)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(record_columns(model)) + "\n")
        try:
            for rec in records:
                fh.write(",".join(repr(v) for v in rec.to_row()) + "\n")
        except FilterCollapseError as err:
            fh.write(f"# collapsed at t={err.t}\n")
            return err.t
    return 0


def _run_single(cfg: ExperimentConfig, run_index: int) -> int:
    scen = get_scenario(cfg.scenario, cfg.model_file or None)
    data_seed = cfg.seed if cfg.data_seed < 0 else cfg.data_seed
    if cfg.data_mode == "fresh":
        data_seed += run_index
    traj = simulate(scen.model, scen.theta_true, cfg.steps, scen.init, data_seed)
    records = run(scen.model, traj.y, scen.theta_init, cfg.em_config(),
                  seed=cfg.seed + run_index, algorithm=cfg.algorithm,
                  num_particles=cfg.particles, init=scen.init)
    return _write_records(Path(cfg.out) / f"run_{run_index}.csv", scen.model, records)


def _num_workers(runs: int) -> int:
    env = os.environ.get("SWITCHEM_THREADS")
    if env:
        return max(1, int(env))
    return max(1, min(os.cpu_count() or 1, runs))


def cmd_run(cfg: ExperimentConfig, scen: Scenario) -> int:
    outdir = Path(cfg.out)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        probe = outdir / ".write_probe"
        probe.touch()
        probe.unlink()
    except OSError as err:
        print(f"error: output directory {cfg.out!r} is not writable: {err}", file=sys.stderr)
        return 1

    workers = _num_workers(cfg.runs)
    collapses = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for j, t_collapse in zip(range(cfg.runs),
                                     pool.map(_run_single, [cfg] * cfg.runs, range(cfg.runs))):
                if t_collapse:
                    collapses[j] = t_collapse
    else:
        for j in range(cfg.runs):
            t_collapse = _run_single(cfg, j)
            if t_collapse:
                collapses[j] = t_collapse

    for j, t_collapse in sorted(collapses.items()):
        print(f"run {j}: filter collapsed at t={t_collapse}", file=sys.stderr)
    print(f"wrote {cfg.runs} run file(s) to {cfg.out}")
    return 2 if collapses else 0


# ---------------------------------------------------------------------------
# mcvar
# ---------------------------------------------------------------------------

def _read_run_file(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = []
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([float(v) for v in line.split(",")])
    return header, np.asarray(rows)


def mc_variance(files, burn_fraction: float = 0.0):
    """Across-run unbiased variance of each parameter column, averaged over
    the time range [burn_fraction * n, n); returns (names, variances)."""
    if len(files) < 2:
        raise ValueError("need at least two run files")
    if not 0.0 <= burn_fraction < 1.0:
        raise ValueError("burn fraction must lie in [0, 1)")
    header0, data0 = _read_run_file(files[0])
    stack = [data0]
    for f in files[1:]:
        header, data = _read_run_file(f)
        if header != header0:
            raise ValueError(f"{f}: column mismatch with {files[0]}")
        if data.shape != data0.shape:
            raise ValueError(f"{f}: row count mismatch with {files[0]}")
        stack.append(data)
    cube = np.stack(stack)                      # (R, T, C)
    first_state = next(i for i, name in enumerate(header0) if name.startswith("state_mean_"))
    names = header0[1:first_state]
    lo = int(math.floor(burn_fraction * cube.shape[1]))
    var_t = cube[:, lo:, 1:first_state].var(axis=0, ddof=1)
    return names, var_t.mean(axis=0)


def cmd_mcvar(args) -> int:
    try:
        names, variances = mc_variance(args.files, args.burn_fraction)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    width = max(len(n) for n in names)
    print(f"{'parameter':<{width}}  time-avg MC variance")
    for name, v in zip(names, variances):
        print(f"{name:<{width}}  {v:.6e}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("parameter,variance\n")
            for name, v in zip(names, variances):
                fh.write(f"{name},{v!r}\n")
    return 0


# ---------------------------------------------------------------------------
# time
# ---------------------------------------------------------------------------

def time_algorithm(scen: Scenario, cfg: ExperimentConfig, algorithm: str,
                   particles: int, steps: int, warmup: int = 100) -> float:
    """Average wall-clock milliseconds per step after a warm-up."""
    traj = simulate(scen.model, scen.theta_true, warmup + steps, scen.init,
                    cfg.seed if cfg.data_seed < 0 else cfg.data_seed)
    records = run(scen.model, traj.y, scen.theta_init, cfg.em_config(),
                  seed=cfg.seed, algorithm=algorithm, num_particles=particles,
                  init=scen.init)
    it = iter(records)
    for _ in range(warmup):
        next(it)
    t0 = time.perf_counter()
    done = 0
    for _ in it:
        done += 1
    elapsed = time.perf_counter() - t0
    return 1000.0 * elapsed / max(done, 1)


def cmd_time(args, cfg: ExperimentConfig, scen: Scenario) -> int:
    algorithms = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    particle_grid = [int(p) for p in args.particle_grid.split(",") if p.strip()]
    rows = []
    if cfg.steps > 0:
        for algorithm in algorithms:
            for particles in particle_grid:
                ms = time_algorithm(scen, cfg, algorithm, particles, cfg.steps, args.warmup)
                rows.append((algorithm, particles, ms))
    print(f"{'algorithm':<10} {'particles':>9} {'ms/step':>10}")
    for algorithm, particles, ms in rows:
        print(f"{algorithm:<10} {particles:>9d} {ms:>10.3f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("algorithm,particles,ms_per_step\n")
            for algorithm, particles, ms in rows:
                fh.write(f"{algorithm},{particles},{ms!r}\n")
    return 0


# ---------------------------------------------------------------------------
# estimate / simulate
# ---------------------------------------------------------------------------

def cmd_estimate(args, cfg: ExperimentConfig, scen: Scenario) -> int:
    out = Path(args.out_file)
    try:
        ys = read_observations(args.input, scen.model.meas_dim)
        records = run(scen.model, ys, scen.theta_init, cfg.em_config(),
                      seed=cfg.seed, algorithm=cfg.algorithm,
                      num_particles=cfg.particles, init=scen.init)
        collapsed = _write_records(out, scen.model, records)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    if collapsed:
        print(f"filter collapsed at t={collapsed}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


def cmd_simulate(args, cfg: ExperimentConfig, scen: Scenario) -> int:
    data_seed = cfg.seed if cfg.data_seed < 0 else cfg.data_seed
    traj = simulate(scen.model, scen.theta_true, cfg.steps, scen.init, data_seed)
    try:
        write_trajectory(traj, args.out_file)
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(f"wrote {args.out_file}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field (repeatable)")
    p.add_argument("--scenario", choices=["benchmark", "jmls_failure",
                                          "cv_positioning", "custom"])
    p.add_argument("--model-file", dest="model_file",
                   help="Python file exposing build() for --scenario custom")
    p.add_argument("--algorithm", choices=list(ALGORITHMS))
    p.add_argument("--particles", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="switchem",
                                     description="online EM benchmark harness for "
                                                 "regime-switching state-space models")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="Monte Carlo estimation runs on synthetic data")
    _add_common(p_run)

    p_mcvar = sub.add_parser("mcvar", help="across-run variance report")
    p_mcvar.add_argument("files", nargs="+", help="run CSV files")
    p_mcvar.add_argument("--burn-fraction", type=float, default=0.0)
    p_mcvar.add_argument("--out", help="write report CSV here")

    p_time = sub.add_parser("time", help="runtime per step over a grid")
    _add_common(p_time)
    p_time.add_argument("--algorithms", default=",".join(ALGORITHMS))
    p_time.add_argument("--particle-grid", default="150,300")
    p_time.add_argument("--warmup", type=int, default=100)

    p_est = sub.add_parser("estimate", help="estimate from an observation CSV")
    _add_common(p_est)
    p_est.add_argument("--input", required=True, help="trajectory/observation CSV")
    p_est.add_argument("--out-file", required=True, help="per-step record CSV")

    p_sim = sub.add_parser("simulate", help="write a synthetic trajectory CSV")
    _add_common(p_sim)
    p_sim.add_argument("--out-file", required=True, help="trajectory CSV path")

    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    if args.command == "mcvar":
        return cmd_mcvar(args)
    try:
        cfg, scen = build_config(args)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    if args.command == "run":
        return cmd_run(cfg, scen)
    if args.command == "time":
        return cmd_time(args, cfg, scen)
    if args.command == "estimate":
        return cmd_estimate(args, cfg, scen)
    if args.command == "simulate":
        return cmd_simulate(args, cfg, scen)
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
