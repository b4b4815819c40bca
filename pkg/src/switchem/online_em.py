"""Single-pass joint state and parameter estimation.

Each incoming observation triggers one filter step under the current
parameter estimate, an update of the per-particle intermediate statistics
with a decreasing step size, aggregation into smoothed sufficient statistics,
and (after an optional burn-in) a closed-form parameter update.  Observations
are consumed once and never stored; memory is independent of the stream
length.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional

import numpy as np

from .model import (FeasibilityConfig, InitialCondition, ModelSpec, StatLayout,
                    SuffStats, Theta, mstep)
from .rbpf import (BootstrapProposal, ParticleSystem, estimate, init_system,
                   rbpf_step)
from .rng import FILTER_STREAM, INIT_STREAM, substream
from .smoothing import aggregate, fs_update, path_update

ALGORITHMS = ("pf_path", "pf_fs", "rbpf_path", "rbpf_fs")

FORWARD_SMOOTHING = "forward"
PATH_SMOOTHING = "path"


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes gamma_t = t^-a with a in (0.5, 1].

    The first step size is exactly 1 and the sequence satisfies the usual
    stochastic-approximation summability requirements.
    """

    exponent: float = 0.7

    def __post_init__(self):
        if not 0.5 < self.exponent <= 1.0:
            raise ValueError("step-size exponent must lie in (0.5, 1]")

    def gamma(self, t: int) -> float:
        return float(t) ** (-self.exponent)


@dataclass(frozen=True)
class EmConfig:
    """Knobs of the online EM loop.

    No parameter update fires before ``burn_in`` (statistics are still
    accumulated), then one fires every ``update_period`` steps.  ``smoother``
    selects the full-mixture or ancestor-path statistic update.
    """

    schedule: StepSchedule = StepSchedule()
    burn_in: int = 20
    update_period: int = 1
    feasibility: FeasibilityConfig = FeasibilityConfig()
    smoother: str = FORWARD_SMOOTHING
    resample_threshold: float = 0.5

    def __post_init__(self):
        if self.burn_in < 1:
            raise ValueError("burn_in must be >= 1")
        if self.update_period < 1:
            raise ValueError("update_period must be >= 1")
        if self.smoother not in (FORWARD_SMOOTHING, PATH_SMOOTHING):
            raise ValueError(f"unknown smoother {self.smoother!r}")


@dataclass
class EstimatorState:
    """Current parameter estimate, particle system and aggregated statistics."""

    theta: Theta
    system: ParticleSystem
    stats: Optional[SuffStats] = None

    @property
    def t(self) -> int:
        return self.system.t


def em_step(state: EstimatorState, y, config: EmConfig, model: ModelSpec,
            layout: StatLayout, rng: np.random.Generator,
            proposal=None) -> EstimatorState:
    """One observation's worth of work: filter, smooth, aggregate, update."""
    theta = state.theta
    t = state.system.t + 1
    gamma = config.schedule.gamma(t)

    system, ctx = rbpf_step(state.system, y, theta, model, proposal,
                            config.resample_threshold, rng)
    if config.smoother == FORWARD_SMOOTHING:
        tstat, _ = fs_update(ctx.prev.x, ctx.prev.log_w, ctx.prev.alpha,
                             ctx.prev.tstat, system.x, y, theta, gamma,
                             model, layout, t)
    else:
        tstat, _ = path_update(ctx.resampled_x, ctx.resampled_alpha,
                               ctx.resampled_tstat, system.x, y, theta, gamma,
                               model, layout, t)
    system.tstat = tstat
    stats = aggregate(system.weights, system.alpha, tstat, layout)

    if t >= config.burn_in and t % config.update_period == 0:
        theta = mstep(stats, theta, model, config.feasibility)
    return EstimatorState(theta=theta, system=system, stats=stats)


# ---------------------------------------------------------------------------
# streaming driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepRecord:
    """One output row: step index, flattened parameters, posterior summaries."""

    t: int
    theta_vec: np.ndarray
    state_mean: np.ndarray
    mode_marginal: np.ndarray

    def to_row(self) -> list:
        return ([float(self.t)] + [float(v) for v in self.theta_vec]
                + [float(v) for v in self.state_mean]
                + [float(v) for v in self.mode_marginal])


def record_columns(model: ModelSpec) -> list:
    """Column names of the per-step record, in emission order."""
    return (["t"] + model.theta_names()
            + [f"state_mean_{i}" for i in range(model.state_dim)]
            + [f"mode_marginal_{k}" for k in range(model.num_modes)])


def _smoother_for(algorithm: str) -> str:
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    return FORWARD_SMOOTHING if algorithm.endswith("_fs") else PATH_SMOOTHING


def run(model: ModelSpec, y_stream: Iterable, init_theta: Theta, config: EmConfig,
        seed: int, *, algorithm: str = "rbpf_fs", num_particles: int = 150,
        init: InitialCondition) -> Iterator[StepRecord]:
    """Stream observations through the chosen estimator, yielding one record
    per step.

    The smoothing backend is taken from the algorithm name (``*_fs`` or
    ``*_path``); ``pf_*`` variants sample the mode inside the particle
    instead of marginalizing it.  Identical (seed, config) reproduce the
    trajectory bit for bit.
    """
    config = replace(config, smoother=_smoother_for(algorithm))
    layout = StatLayout.from_model(model)
    rng0 = substream(seed, INIT_STREAM, 0)

    if algorithm.startswith("rbpf"):
        state = EstimatorState(init_theta, init_system(model, layout, num_particles, init, rng0))
        stepper = em_step
        summarize = estimate
    else:
        from .baseline import baseline_em_step, init_joint_system, pf_estimate
        state = EstimatorState(init_theta, init_joint_system(model, layout, num_particles, init, rng0))
        stepper = baseline_em_step
        summarize = pf_estimate

    for t, y in enumerate(y_stream, start=1):
        rng = substream(seed, FILTER_STREAM, t)
        state = stepper(state, y, config, model, layout, rng)
        summary = summarize(state.system)
        yield StepRecord(t=t, theta_vec=model.theta_to_vector(state.theta),
                         state_mean=summary.state_mean,
                         mode_marginal=summary.mode_marginal)
