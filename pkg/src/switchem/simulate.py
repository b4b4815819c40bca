"""Seeded synthetic-data generation and the built-in benchmark scenarios.

Three ready-made scenarios are provided:

* ``benchmark`` - the 1-D highly nonlinear growth model with two-mode
  Gaussian measurement noise; the six scalars (per-mode noise mean/variance
  and the TPM diagonals) are estimated while the process noise is known.
* ``jmls_failure`` - a linear system with intermittent measurement failures;
  all noise statistics are known and only the TPM is estimated.
* ``cv_positioning`` - a planar nearly-constant-velocity target ranged by
  three fixed beacons, one of which switches between line-of-sight and
  non-line-of-sight noise regimes; that beacon's noise parameters (variance
  capped at 100) and the TPM are estimated.

The generic :func:`simulate` works for any model implementing the interface.
"""

from __future__ import annotations

import importlib.util
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .model import (FeasibilityConfig, GaussianModeParams, GaussianModel,
                    InitialCondition, ModelSpec, Theta)
from .rng import SIM_STREAM, substream


# ---------------------------------------------------------------------------
# generic simulator
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """A simulated run: states x_{0..n}, modes r_{0..n}, observations y_{1..n}."""

    x: np.ndarray
    r: np.ndarray
    y: np.ndarray
    seed: int

    def __post_init__(self):
        if self.x.shape[0] != self.r.shape[0] or self.x.shape[0] != self.y.shape[0] + 1:
            raise ValueError("need n+1 states and modes for n observations")

    @property
    def num_steps(self) -> int:
        return self.y.shape[0]


def simulate(model: ModelSpec, theta: Theta, n: int, init: InitialCondition,
             seed: int) -> Trajectory:
    """Draw a length-n trajectory; bitwise reproducible from the seed."""
    rng0 = substream(seed, SIM_STREAM, 0)
    x = np.empty((n + 1, model.state_dim))
    r = np.empty(n + 1, dtype=np.intp)
    y = np.empty((n, model.meas_dim))
    x[0] = init.draw_state(rng0)
    if init.mode is not None:
        r[0] = init.mode
    else:
        dist = init.mode_dist(model.num_modes)
        cum = np.cumsum(dist)
        cum[-1] = 1.0
        r[0] = min(int(np.searchsorted(cum, rng0.random(), side="right")), model.num_modes - 1)
    for t in range(1, n + 1):
        rng = substream(seed, SIM_STREAM, t)
        row = theta.tpm[r[t - 1]]
        cum = np.cumsum(row)
        cum[-1] = 1.0
        r[t] = min(int(np.searchsorted(cum, rng.random(), side="right")), model.num_modes - 1)
        k = int(r[t])
        x[t] = model.sample_transition(k, x[t - 1][None, :], theta.mode_params[k], t, rng)[0]
        y[t - 1] = model.sample_measurement(k, x[t][None, :], theta.mode_params[k], t, rng)[0]
    return Trajectory(x=x, r=r, y=y, seed=seed)


def write_trajectory(traj: Trajectory, path) -> None:
    """CSV with header ``t,r,x_1..x_dx,y_1..y_dy`` and one row per step t>=1."""
    dx = traj.x.shape[1]
    dy = traj.y.shape[1]
    header = (["t", "r"] + [f"x_{i}" for i in range(1, dx + 1)]
              + [f"y_{i}" for i in range(1, dy + 1)])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for t in range(1, traj.num_steps + 1):
            row = [str(t), str(int(traj.r[t]))]
            row += [repr(float(v)) for v in traj.x[t]]
            row += [repr(float(v)) for v in traj.y[t - 1]]
            fh.write(",".join(row) + "\n")


def read_observations(path, meas_dim: int) -> Iterator[np.ndarray]:
    """Stream the observation columns of a trajectory CSV.

    Raises ValueError naming the offending line on any schema mismatch.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise ValueError(f"{path}:1: empty file")
        cols = [c.strip() for c in header.strip().split(",")]
        wanted = [f"y_{i}" for i in range(1, meas_dim + 1)]
        try:
            idx = [cols.index(w) for w in wanted]
        except ValueError:
            raise ValueError(f"{path}:1: header {cols} lacks observation columns {wanted}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != len(cols):
                raise ValueError(f"{path}:{lineno}: expected {len(cols)} fields, got {len(parts)}")
            try:
                yield np.array([float(parts[i]) for i in idx])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric observation field")


# ---------------------------------------------------------------------------
# scenario bundles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """A model plus everything needed to simulate and estimate it."""

    name: str
    model: ModelSpec
    theta_true: Theta
    theta_init: Theta
    init: InitialCondition
    defaults: dict = field(default_factory=dict)


class BenchmarkModel(GaussianModel):
    """Scalar growth model with oscillatory forcing and quadratic readout.

    The dynamics are mode-independent with known unit-variance process noise;
    the measurement noise mean and variance switch with the hidden mode and
    are estimated.
    """

    def __init__(self):
        fixed = [GaussianModeParams(0.0, 1.0, 0.0, 1.0) for _ in range(2)]
        super().__init__(num_modes=2, state_dim=1, meas_dim=1, fixed_params=fixed,
                         estimate_process=False, estimate_measurement=True,
                         uniform_dynamics=True, uniform_meas_map=True)

    def drift(self, k, x, t):
        x0 = x[..., 0]
        out = 0.5 * x0 + 25.0 * x0 / (1.0 + x0 * x0) + 8.0 * math.cos(1.2 * t)
        return out[..., None]

    def meas(self, k, x, t):
        return x[..., 0:1] ** 2 / 20.0


def benchmark_model() -> Scenario:
    model = BenchmarkModel()
    theta_true = Theta(
        mode_params=(
            GaussianModeParams(0.0, 1.0, 0.0, 1.0),
            GaussianModeParams(0.0, 1.0, 3.0, 4.0),
        ),
        tpm=np.array([[0.95, 0.05], [0.20, 0.80]]),
    )
    theta_init = Theta(
        mode_params=(
            GaussianModeParams(0.0, 1.0, 1.0, 2.0),
            GaussianModeParams(0.0, 1.0, 2.0, 2.0),
        ),
        tpm=np.array([[0.85, 0.15], [0.30, 0.70]]),
    )
    init = InitialCondition(state=np.zeros(1), mode=0)
    defaults = {"particles": 150, "steps": 10000, "exponent": 0.7,
                "algorithm": "rbpf_fs"}
    return Scenario("benchmark", model, theta_true, theta_init, init, defaults)


class JmlsFailureModel(GaussianModel):
    """Random-walk state observed directly, with intermittent sensor failure.

    Mode 0 is a failure: the measurement is pure wide-band noise carrying no
    state information.  Mode 1 observes the state with moderate noise.  All
    noise statistics are known; only the mode transition probabilities are
    estimated.
    """

    def __init__(self):
        fixed = (
            GaussianModeParams(0.0, 4.0, 0.0, 10000.0),
            GaussianModeParams(0.0, 4.0, 0.0, 100.0),
        )
        super().__init__(num_modes=2, state_dim=1, meas_dim=1, fixed_params=fixed,
                         estimate_process=False, estimate_measurement=False,
                         uniform_dynamics=True)

    def drift(self, k, x, t):
        return x

    def meas(self, k, x, t):
        if k == 0:
            return np.zeros_like(x[..., 0:1])
        return x[..., 0:1]


def jmls_failure_model() -> Scenario:
    model = JmlsFailureModel()
    theta_true = Theta(model.fixed_params, np.array([[0.60, 0.40], [0.85, 0.15]]))
    theta_init = Theta(model.fixed_params, np.array([[0.50, 0.50], [0.50, 0.50]]))
    init = InitialCondition(state=np.zeros(1), state_cov=np.array([[400.0]]))
    defaults = {"particles": 500, "steps": 20000, "exponent": 0.95,
                "algorithm": "rbpf_path"}
    return Scenario("jmls_failure", model, theta_true, theta_init, init, defaults)


class CvPositioningModel(GaussianModel):
    """Planar nearly-constant-velocity target ranged by three fixed beacons.

    State [px, vx, py, vy]; the driving acceleration noise is 2-D and known.
    Beacons 1 and 2 have known Gaussian range noise; beacon 3 switches
    between a line-of-sight mode and a biased, noisier non-line-of-sight
    mode, whose mean and variance are estimated per mode.
    """

    SWITCHING_BS = 2

    def __init__(self, dt: float = 0.53, sigma_v: float = 1.0,
                 bs_positions: Optional[np.ndarray] = None,
                 known_mu: float = 0.0, known_var: float = 25.0):
        self.dt = float(dt)
        if bs_positions is None:
            bs_positions = np.array([[0.0, 0.0], [1000.0, 0.0], [500.0, 866.0]])
        self.bs_positions = np.asarray(bs_positions, dtype=float)
        self.F = np.array([
            [1.0, dt, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, dt],
            [0.0, 0.0, 0.0, 1.0],
        ])
        gain = np.array([
            [dt * dt / 2.0, 0.0],
            [dt, 0.0],
            [0.0, dt * dt / 2.0],
            [0.0, dt],
        ])
        self.known_mu = float(known_mu)
        self.known_var = float(known_var)
        fixed = tuple(
            GaussianModeParams(np.zeros(2), sigma_v ** 2 * np.eye(2),
                               np.array([known_mu, known_mu, 0.0]),
                               np.diag([known_var, known_var, known_var]))
            for _ in range(2)
        )
        super().__init__(num_modes=2, state_dim=4, meas_dim=3, fixed_params=fixed,
                         estimate_process=False, estimate_measurement=False,
                         noise_gain=gain, uniform_dynamics=True,
                         uniform_meas_map=True)

    def drift(self, k, x, t):
        return x @ self.F.T

    def meas(self, k, x, t):
        pos = x[..., [0, 2]]
        diff = pos[..., None, :] - self.bs_positions
        return np.sqrt(np.sum(diff * diff, axis=-1))

    # beacon-3 noise mean/variance per mode are the only estimated mode params

    def suffstat(self, k, y, x_next, x_prev, t):
        resid = (np.asarray(y, dtype=float)[..., self.SWITCHING_BS]
                 - self.meas(k, np.asarray(x_next, dtype=float), t)[..., self.SWITCHING_BS])
        return np.stack([resid, resid * resid], axis=-1)

    def suffstat_dim(self, k) -> int:
        return 2

    def maximizer(self, k, s3_k, s2_k, config: FeasibilityConfig) -> GaussianModeParams:
        base = self.fixed_params[k]
        mu = s3_k[0] / s2_k
        var = s3_k[1] / s2_k - mu * mu
        var = min(max(var, config.var_floor), config.var_cap)
        mu_e = base.mu_e.copy()
        Sigma_e = base.Sigma_e.copy()
        mu_e[self.SWITCHING_BS] = mu
        Sigma_e[self.SWITCHING_BS, self.SWITCHING_BS] = var
        return GaussianModeParams(base.mu_v, base.Sigma_v, mu_e, Sigma_e)

    def complete_data_score(self, k, theta_k, stats) -> float:
        from .model import gaussian_channel_score
        i = self.SWITCHING_BS
        return gaussian_channel_score(
            stats.s3[k][0:1], stats.s3[k][1:2], float(stats.s2[k]),
            theta_k.mu_e[i:i + 1], theta_k.Sigma_e[i:i + 1, i:i + 1])

    def mode_param_names(self, k) -> list:
        return [f"mu_bs3_{k}", f"var_bs3_{k}"]

    def mode_param_vector(self, k, theta_k) -> np.ndarray:
        i = self.SWITCHING_BS
        return np.array([theta_k.mu_e[i], theta_k.Sigma_e[i, i]])


def cv_positioning_model() -> Scenario:
    model = CvPositioningModel()

    def with_bs3(mu, var):
        base = model.fixed_params[0]
        mu_e = base.mu_e.copy()
        Sigma_e = base.Sigma_e.copy()
        mu_e[model.SWITCHING_BS] = mu
        Sigma_e[model.SWITCHING_BS, model.SWITCHING_BS] = var
        return GaussianModeParams(base.mu_v, base.Sigma_v, mu_e, Sigma_e)

    theta_true = Theta((with_bs3(0.0, 25.0), with_bs3(45.0, 90.0)),
                       np.array([[0.90, 0.10], [0.20, 0.80]]))
    theta_init = Theta((with_bs3(0.0, 50.0), with_bs3(20.0, 50.0)),
                       np.array([[0.50, 0.50], [0.50, 0.50]]))
    init = InitialCondition(state=np.array([100.0, 4.0, 50.0, 2.0]), mode=0)
    defaults = {"particles": 500, "steps": 4000, "exponent": 0.7,
                "algorithm": "rbpf_path", "var_cap": 100.0}
    return Scenario("cv_positioning", model, theta_true, theta_init, init, defaults)


_BUILTIN = {
    "benchmark": benchmark_model,
    "jmls_failure": jmls_failure_model,
    "cv_positioning": cv_positioning_model,
}


def get_scenario(name: str, model_file: Optional[str] = None) -> Scenario:
    """Look up a built-in scenario, or load a custom one from a Python file
    exposing ``build() -> Scenario``."""
    if name in _BUILTIN:
        return _BUILTIN[name]()
    if name == "custom":
        if not model_file:
            raise ValueError("scenario 'custom' requires a model file")
        spec = importlib.util.spec_from_file_location("switchem_custom_model", model_file)
        mod = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(mod)
        return mod.build()
    raise ValueError(f"unknown scenario {name!r}")
