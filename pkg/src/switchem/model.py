"""Core types and parameter machinery for regime-switching state-space models.

A jump Markov nonlinear system switches between K dynamic/measurement modes
driven by a hidden finite-state Markov chain.  Mode k has a transition
density f_k(x_t | x_{t-1}), a measurement density g_k(y_t | x_t) and its own
parameter block theta_k; the chain itself is governed by a row-stochastic
transition matrix.  This module defines the model interface, the parameter
containers, the sufficient-statistic containers and their canonical flat
layout, and the closed-form parameter updates for additive-Gaussian-noise
models.

Conventions used throughout the package:

* Modes are 0-based integers ``0 .. K-1``.
* State and measurement vectors always carry an explicit trailing dimension,
  so a batch of N scalar states has shape ``(N, 1)``.  Model methods must
  broadcast over leading dimensions.
* Every model method takes the time index ``t`` of the step being evaluated
  (transition into x_t, measurement of y_t), which supports time-varying
  dynamics.
* All parameter containers are treated as immutable after construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# feasibility constraints
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeasibilityConfig:
    """Projection constants that keep estimated parameters usable.

    var_floor / var_cap bound the eigenvalues of estimated noise covariances,
    tpm_floor keeps transition probabilities strictly positive (rows are
    renormalized after flooring), and occupancy_floor is the smallest
    accumulated mode mass for which a parameter update is attempted at all;
    below it the previous value is retained (an unvisited mode is not an
    error).
    """

    var_floor: float = 1e-6
    var_cap: float = math.inf
    tpm_floor: float = 1e-6
    occupancy_floor: float = 1e-8


# ---------------------------------------------------------------------------
# transition matrix helpers
# ---------------------------------------------------------------------------

def validate_tpm(tpm: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Check that ``tpm`` is a K x K row-stochastic matrix; returns it."""
    tpm = np.asarray(tpm, dtype=float)
    if tpm.ndim != 2 or tpm.shape[0] != tpm.shape[1] or tpm.shape[0] < 1:
        raise ValueError(f"transition matrix must be square, got shape {tpm.shape}")
    if np.any(tpm < 0):
        raise ValueError("transition matrix has negative entries")
    rows = tpm.sum(axis=1)
    if np.any(np.abs(rows - 1.0) > tol):
        raise ValueError(f"transition matrix rows must sum to 1, got {rows}")
    return tpm


def project_tpm(tpm: np.ndarray, floor: float) -> np.ndarray:
    """Project each row onto the simplex with entries >= ``floor``.

    Entries below the floor are raised to exactly the floor and the remaining
    mass is redistributed proportionally over the other entries, so the
    result is row-stochastic AND entrywise >= floor.
    """
    out = np.asarray(tpm, dtype=float).copy()
    out /= out.sum(axis=1, keepdims=True)
    K = out.shape[1]
    if K * floor > 1.0:
        raise ValueError("floor too large for the number of modes")
    if np.all(out >= floor):
        return out
    for k in range(out.shape[0]):
        for _ in range(K):
            low = out[k] < floor
            if not np.any(low):
                break
            free = ~low
            out[k, low] = floor
            budget = 1.0 - floor * np.count_nonzero(low)
            out[k, free] *= budget / out[k, free].sum()
    return out


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

def _as_vector(a) -> np.ndarray:
    if isinstance(a, np.ndarray) and a.ndim == 1 and a.dtype == np.float64:
        return a
    return np.atleast_1d(np.asarray(a, dtype=float))


def _as_matrix(a) -> np.ndarray:
    if isinstance(a, np.ndarray) and a.ndim == 2 and a.dtype == np.float64:
        return a
    return np.atleast_2d(np.asarray(a, dtype=float))


@dataclass(frozen=True)
class GaussianModeParams:
    """Noise parameters of one mode of an additive-Gaussian-noise model.

    mu_v / Sigma_v describe the process noise (in the noise space, which may
    be lower-dimensional than the state when a gain matrix maps it into the
    state), mu_e / Sigma_e the measurement noise.  Covariances are symmetric
    positive definite.
    """

    mu_v: np.ndarray
    Sigma_v: np.ndarray
    mu_e: np.ndarray
    Sigma_e: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu_v", _as_vector(self.mu_v))
        object.__setattr__(self, "Sigma_v", _as_matrix(self.Sigma_v))
        object.__setattr__(self, "mu_e", _as_vector(self.mu_e))
        object.__setattr__(self, "Sigma_e", _as_matrix(self.Sigma_e))


@dataclass(frozen=True)
class Theta:
    """Full parameter of a switching model: per-mode blocks plus the TPM."""

    mode_params: tuple
    tpm: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mode_params", tuple(self.mode_params))
        object.__setattr__(self, "tpm", validate_tpm(self.tpm))
        if len(self.mode_params) != self.tpm.shape[0]:
            raise ValueError("number of mode parameter blocks must match the TPM size")

    @property
    def num_modes(self) -> int:
        return self.tpm.shape[0]


def theta_to_dict(theta: Theta) -> dict:
    """JSON-friendly representation; matrices are nested row-major lists."""
    modes = []
    for p in theta.mode_params:
        modes.append({
            "mu_v": p.mu_v.tolist(),
            "Sigma_v": p.Sigma_v.tolist(),
            "mu_e": p.mu_e.tolist(),
            "Sigma_e": p.Sigma_e.tolist(),
        })
    return {"tpm": theta.tpm.tolist(), "modes": modes}


def theta_from_dict(doc: dict) -> Theta:
    modes = tuple(
        GaussianModeParams(m["mu_v"], m["Sigma_v"], m["mu_e"], m["Sigma_e"])
        for m in doc["modes"]
    )
    return Theta(modes, np.asarray(doc["tpm"], dtype=float))


def save_theta(theta: Theta, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(theta_to_dict(theta), fh, indent=2)
        fh.write("\n")


def load_theta(path) -> Theta:
    with open(path, "r", encoding="utf-8") as fh:
        return theta_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# sufficient statistics and their canonical flat layout
# ---------------------------------------------------------------------------

@dataclass
class SuffStats:
    """Running smoothed sufficient statistics of a switching model.

    s1[k, l] carries the expected mass of (prev mode k -> next mode l)
    transition pairs, s2[k] the expected occupancy of mode k, and s3[k] the
    expected mode-k statistic vector of length ``suffstat_dim(k)``.  Under the
    normalized step-size convention (first step size equal to 1) s1 and s2
    each sum to one.
    """

    s1: np.ndarray
    s2: np.ndarray
    s3: list

    @property
    def num_modes(self) -> int:
        return self.s2.shape[0]


class StatLayout:
    """Canonical flat ordering of the stacked per-step statistic.

    The flat vector is ``[s1 row-major (K*K); s2 (K); s3 of mode 0; ...;
    s3 of mode K-1]``.  Per-mode statistic dimensions may differ; offsets are
    precomputed from the model.
    """

    def __init__(self, num_modes: int, stat_dims: Sequence[int]):
        self.num_modes = int(num_modes)
        self.stat_dims = tuple(int(d) for d in stat_dims)
        if len(self.stat_dims) != self.num_modes:
            raise ValueError("need one statistic dimension per mode")
        K = self.num_modes
        offsets = []
        pos = K * K + K
        for d in self.stat_dims:
            offsets.append(pos)
            pos += d
        self.s3_offsets = tuple(offsets)
        self.dim = pos
        # cached index arrays for the one-hot blocks (hot path of the
        # smoothing updates): pair (k, l) lives at flat position k*K + l
        k_idx, l_idx = np.meshgrid(np.arange(K), np.arange(K), indexing="ij")
        self.pair_k = k_idx.ravel()
        self.pair_l = l_idx.ravel()
        self.pair_flat = (k_idx * K + l_idx).ravel()
        self.mode_arange = np.arange(K)
        self.s2_positions = K * K + self.mode_arange

    @classmethod
    def from_model(cls, model: "ModelSpec") -> "StatLayout":
        return cls(model.num_modes, [model.suffstat_dim(k) for k in range(model.num_modes)])

    def s1_index(self, k_prev: int, l_next: int) -> int:
        return k_prev * self.num_modes + l_next

    def s2_index(self, l_next: int) -> int:
        return self.num_modes * self.num_modes + l_next

    def s3_slice(self, k: int) -> slice:
        off = self.s3_offsets[k]
        return slice(off, off + self.stat_dims[k])

    def unpack(self, vec: np.ndarray) -> SuffStats:
        vec = np.asarray(vec, dtype=float)
        K = self.num_modes
        s1 = vec[: K * K].reshape(K, K).copy()
        s2 = vec[K * K: K * K + K].copy()
        s3 = [vec[self.s3_slice(k)].copy() for k in range(K)]
        return SuffStats(s1, s2, s3)

    def pack(self, stats: SuffStats) -> np.ndarray:
        vec = np.empty(self.dim)
        K = self.num_modes
        vec[: K * K] = np.asarray(stats.s1, dtype=float).reshape(-1)
        vec[K * K: K * K + K] = stats.s2
        for k in range(K):
            vec[self.s3_slice(k)] = stats.s3[k]
        return vec


# ---------------------------------------------------------------------------
# initial condition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InitialCondition:
    """Initial continuous state and mode information for filter/simulator.

    ``state`` is the known initial state, or the mean of a Gaussian prior when
    ``state_cov`` is given.  ``mode`` is the known initial mode; when None the
    initial mode is distributed per ``mode_probs`` (uniform if that is also
    None).
    """

    state: np.ndarray
    mode: Optional[int] = None
    state_cov: Optional[np.ndarray] = None
    mode_probs: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "state", np.atleast_1d(np.asarray(self.state, dtype=float)))
        if self.state_cov is not None:
            object.__setattr__(self, "state_cov", np.atleast_2d(np.asarray(self.state_cov, dtype=float)))
        if self.mode_probs is not None:
            object.__setattr__(self, "mode_probs", np.asarray(self.mode_probs, dtype=float))

    def mode_dist(self, num_modes: int) -> np.ndarray:
        if self.mode is not None:
            out = np.zeros(num_modes)
            out[self.mode] = 1.0
            return out
        if self.mode_probs is not None:
            return self.mode_probs.copy()
        return np.full(num_modes, 1.0 / num_modes)

    def draw_states(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n samples from the initial state distribution, shape (n, d_x)."""
        if self.state_cov is None:
            return np.tile(self.state, (n, 1))
        chol = np.linalg.cholesky(self.state_cov)
        z = rng.standard_normal((n, self.state.shape[0]))
        return self.state + z @ chol.T

    def draw_state(self, rng: np.random.Generator) -> np.ndarray:
        return self.draw_states(1, rng)[0]


# ---------------------------------------------------------------------------
# Gaussian density helpers
# ---------------------------------------------------------------------------

def mvn_logpdf(resid: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Log density of N(mu, sigma) at ``resid``; broadcasts over leading dims.

    ``resid`` has shape (..., d); the result has shape (...).
    """
    resid = np.asarray(resid, dtype=float)
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    d = sigma.shape[0]
    if d == 1:
        var = sigma[0, 0]
        z = resid[..., 0] - mu[0]
        return -0.5 * (z * z / var + _LOG_2PI + math.log(var))
    dif = resid - mu
    prec = np.linalg.inv(sigma)
    sign, logdet = np.linalg.slogdet(sigma)
    if sign <= 0:
        raise np.linalg.LinAlgError("covariance is not positive definite")
    quad = np.einsum("...i,ij,...j->...", dif, prec, dif)
    return -0.5 * (quad + d * _LOG_2PI + logdet)


def _outer_flat(r: np.ndarray) -> np.ndarray:
    """Flattened outer product r r^T along the last axis: (..., d) -> (..., d*d)."""
    d = r.shape[-1]
    out = np.einsum("...i,...j->...ij", r, r)
    return out.reshape(r.shape[:-1] + (d * d,))


def gaussian_suffstat(y, x_next, x_prev, drift, meas) -> np.ndarray:
    """Stacked noise statistic for one mode of an additive-Gaussian model.

    Returns ``[x_next - drift(x_prev); vec(outer); y - meas(x_next);
    vec(outer)]`` along the last axis, broadcasting over leading dimensions.
    ``drift`` and ``meas`` are the mode's already-bound state map and
    measurement map.
    """
    rv = np.asarray(x_next, dtype=float) - drift(np.asarray(x_prev, dtype=float))
    re = np.asarray(y, dtype=float) - meas(np.asarray(x_next, dtype=float))
    shape = np.broadcast_shapes(rv.shape[:-1], re.shape[:-1])
    rv = np.broadcast_to(rv, shape + rv.shape[-1:])
    re = np.broadcast_to(re, shape + re.shape[-1:])
    return np.concatenate([rv, _outer_flat(rv), re, _outer_flat(re)], axis=-1)


def gaussian_channel_maximizer(first_moment: np.ndarray,
                               second_moment_flat: np.ndarray,
                               count: float,
                               config: FeasibilityConfig):
    """Mean/covariance maximizing the accumulated Gaussian log likelihood.

    ``first_moment`` is the accumulated residual sum, ``second_moment_flat``
    the accumulated flattened outer-product sum and ``count`` the accumulated
    occupancy.  The covariance is symmetrized and its eigenvalues clipped to
    [var_floor, var_cap]; the estimate is invariant to rescaling all three
    inputs by a common positive factor.
    """
    if count <= 0:
        raise ValueError("occupancy must be positive for a parameter update")
    first_moment = np.asarray(first_moment, dtype=float)
    d = first_moment.shape[-1]
    if d == 1:
        m = float(first_moment[0]) / count
        v = float(second_moment_flat[0]) / count - m * m
        v = min(max(v, config.var_floor), config.var_cap)
        return np.array([m]), np.array([[v]])
    mu = first_moment / count
    cov = np.asarray(second_moment_flat, dtype=float).reshape(d, d) / count - np.outer(mu, mu)
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    vals = np.clip(vals, config.var_floor, config.var_cap)
    cov = (vecs * vals) @ vecs.T
    cov = 0.5 * (cov + cov.T)
    return mu, cov


def gaussian_maximizer(s3: np.ndarray, s2: float, state_dim: int, meas_dim: int,
                       config: FeasibilityConfig = FeasibilityConfig()) -> GaussianModeParams:
    """Closed-form update of all four noise parameters from a stacked statistic.

    ``s3`` is laid out as produced by :func:`gaussian_suffstat`:
    process first moment (d_x), process second moment (d_x^2), measurement
    first moment (d_y), measurement second moment (d_y^2).
    """
    s3 = np.asarray(s3, dtype=float)
    dx, dy = state_dim, meas_dim
    expected = dx + dx * dx + dy + dy * dy
    if s3.shape[-1] != expected:
        raise ValueError(f"statistic has length {s3.shape[-1]}, expected {expected}")
    mu_v, Sigma_v = gaussian_channel_maximizer(s3[:dx], s3[dx:dx + dx * dx], s2, config)
    off = dx + dx * dx
    mu_e, Sigma_e = gaussian_channel_maximizer(s3[off:off + dy], s3[off + dy:], s2, config)
    return GaussianModeParams(mu_v, Sigma_v, mu_e, Sigma_e)


def gaussian_channel_score(m1: np.ndarray, m2_flat: np.ndarray, count: float,
                           mu: np.ndarray, sigma: np.ndarray) -> float:
    """Accumulated Gaussian log likelihood (constants dropped) of one channel.

    Equals sum_i w_i log N(r_i; mu, sigma) when the moments were accumulated
    as m1 = sum w_i r_i, m2 = sum w_i r_i r_i^T, count = sum w_i.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    d = mu.shape[0]
    prec = np.linalg.inv(sigma)
    _, logdet = np.linalg.slogdet(sigma)
    lin = float(m1 @ (prec @ mu))
    quad = -0.5 * float(np.sum(prec * np.asarray(m2_flat).reshape(d, d)))
    log_norm = 0.5 * float(mu @ prec @ mu) + 0.5 * (d * _LOG_2PI + logdet)
    return lin + quad - count * log_norm


# ---------------------------------------------------------------------------
# model interface
# ---------------------------------------------------------------------------

class ModelSpec:
    """Behavioral interface of a switching state-space model.

    Subclasses provide densities, samplers, the per-mode sufficient-statistic
    map and its closed-form maximizer.  All density/statistic methods must
    broadcast over leading dimensions of their state arguments and accept the
    time index of the step being evaluated.
    """

    num_modes: int
    state_dim: int
    meas_dim: int
    #: True when f_k(x_t | x_{t-1}; theta_k) is the same density for every
    #: mode k; lets filters and smoothers evaluate it once per step.
    mode_independent_dynamics: bool = False
    #: False when suffstat ignores x_prev (e.g. only measurement-noise
    #: statistics); smoothers then skip the pairwise statistic tensor.
    suffstat_needs_prev: bool = True

    def log_trans_density(self, k, x_next, x_prev, theta_k, t):
        raise NotImplementedError

    def log_meas_density(self, k, y, x, theta_k, t):
        raise NotImplementedError

    def sample_transition(self, k, x_prev, theta_k, t, rng):
        raise NotImplementedError

    def sample_measurement(self, k, x, theta_k, t, rng):
        raise NotImplementedError

    def suffstat(self, k, y, x_next, x_prev, t):
        raise NotImplementedError

    def suffstat_dim(self, k) -> int:
        raise NotImplementedError

    def maximizer(self, k, s3_k, s2_k, config: FeasibilityConfig):
        raise NotImplementedError

    def complete_data_score(self, k, theta_k, stats: SuffStats) -> float:
        """Optional oracle hook: accumulated complete-data log likelihood of
        mode k under ``stats`` (additive constants dropped)."""
        raise NotImplementedError

    # ----- batched-by-mode conveniences -----
    #
    # The sampled-mode filters evaluate model quantities at one mode per
    # particle.  These default implementations loop over the modes present;
    # models with exploitable structure may override them.

    def log_meas_density_table(self, y, x, theta: Theta, t):
        """Measurement log density under every mode, shape (..., K)."""
        return np.stack([self.log_meas_density(k, y, x, theta.mode_params[k], t)
                         for k in range(self.num_modes)], axis=-1)

    def log_meas_density_modes(self, r, y, x, theta: Theta, t):
        """Measurement log density of particle i under its own mode r[i]."""
        out = np.empty(x.shape[0])
        for k in range(self.num_modes):
            sel = r == k
            if np.any(sel):
                out[sel] = self.log_meas_density(k, y, x[sel], theta.mode_params[k], t)
        return out

    def sample_transition_modes(self, r, x_prev, theta: Theta, t, rng):
        """Transition draws where particle i moves under its own mode r[i]."""
        x = np.empty_like(x_prev)
        for k in range(self.num_modes):
            sel = r == k
            if np.any(sel):
                x[sel] = self.sample_transition(k, x_prev[sel], theta.mode_params[k], t, rng)
        return x

    def suffstat_modes(self, r, y, x_next, x_prev, t):
        """Per-particle statistic at each particle's own mode; requires equal
        statistic dimensions across modes."""
        out = np.empty((x_next.shape[0], self.suffstat_dim(0)))
        for k in range(self.num_modes):
            sel = r == k
            if np.any(sel):
                out[sel] = self.suffstat(k, y, x_next[sel], x_prev[sel], t)
        return out

    # ----- parameter flattening (per-step record schema) -----

    def theta_names(self) -> list:
        """Column names of the flattened parameter vector.

        Free per-mode parameters come first (mode 0, mode 1, ...), followed
        by all TPM entries row-major as ``pi_{row}_{col}``.
        """
        names = []
        for k in range(self.num_modes):
            names.extend(self.mode_param_names(k))
        for i in range(self.num_modes):
            for j in range(self.num_modes):
                names.append(f"pi_{i}_{j}")
        return names

    def theta_to_vector(self, theta: Theta) -> np.ndarray:
        parts = [self.mode_param_vector(k, theta.mode_params[k]) for k in range(self.num_modes)]
        parts.append(theta.tpm.reshape(-1))
        return np.concatenate(parts)

    def mode_param_names(self, k) -> list:
        raise NotImplementedError

    def mode_param_vector(self, k, theta_k) -> np.ndarray:
        raise NotImplementedError


def log_joint(k, y, x_next, x_prev, theta_k, model: ModelSpec, t) -> np.ndarray:
    """Log of g_k(y | x_next) f_k(x_next | x_prev); may be -inf."""
    return (model.log_meas_density(k, y, x_next, theta_k, t)
            + model.log_trans_density(k, x_next, x_prev, theta_k, t))


# ---------------------------------------------------------------------------
# M-step
# ---------------------------------------------------------------------------

def mstep(stats: SuffStats, prev: Theta, model: ModelSpec,
          config: FeasibilityConfig = FeasibilityConfig()) -> Theta:
    """Parameter update from smoothed sufficient statistics.

    TPM rows are the normalized rows of s1, per-mode parameters come from the
    model's maximizer; the result is projected onto the feasible set.  A mode
    (or TPM row) whose accumulated mass falls below the occupancy floor keeps
    its previous value.
    """
    K = model.num_modes
    row_sums = stats.s1.sum(axis=1)
    visited = row_sums >= config.occupancy_floor
    tpm = np.where(visited[:, None],
                   stats.s1 / np.where(visited, row_sums, 1.0)[:, None],
                   prev.tpm)
    tpm = project_tpm(tpm, config.tpm_floor)

    modes = list(prev.mode_params)
    for k in range(K):
        if float(stats.s2[k]) >= config.occupancy_floor:
            modes[k] = model.maximizer(k, stats.s3[k], float(stats.s2[k]), config)
    return Theta(tuple(modes), tpm)


# ---------------------------------------------------------------------------
# additive-Gaussian-noise model base
# ---------------------------------------------------------------------------

class GaussianModel(ModelSpec):
    """Switching model with additive Gaussian noise on both equations.

        x_t = drift(k, x_{t-1}, t) + G v_t,   v_t ~ N(mu_v[k], Sigma_v[k])
        y_t = meas(k, x_t, t) + e_t,          e_t ~ N(mu_e[k], Sigma_e[k])

    ``noise_gain`` G (state_dim x noise_dim) defaults to the identity; a
    rectangular gain gives rank-deficient process noise, in which case the
    transition density is evaluated in the noise space (least-squares
    recovery of v, -inf off the reachable affine subspace; the constant
    Jacobian factor is dropped since it cancels in every ratio the filters
    and smoothers form).

    Subclasses implement ``drift`` and ``meas``.  ``fixed_params`` holds the
    known values of the channels that are not estimated; estimated channels
    are refreshed by :meth:`maximizer`.
    """

    def __init__(self, num_modes: int, state_dim: int, meas_dim: int,
                 fixed_params: Sequence[GaussianModeParams],
                 estimate_process: bool = False,
                 estimate_measurement: bool = True,
                 noise_gain: Optional[np.ndarray] = None,
                 uniform_dynamics: bool = False,
                 uniform_meas_map: bool = False):
        self.num_modes = int(num_modes)
        self.state_dim = int(state_dim)
        self.meas_dim = int(meas_dim)
        self.estimate_process = bool(estimate_process)
        self.estimate_measurement = bool(estimate_measurement)
        self.fixed_params = tuple(fixed_params)
        if len(self.fixed_params) != self.num_modes:
            raise ValueError("need one fixed parameter block per mode")
        if noise_gain is None:
            self.noise_gain = None
            self.noise_dim = self.state_dim
            self._gain_pinv = None
        else:
            self.noise_gain = np.asarray(noise_gain, dtype=float)
            self.noise_dim = self.noise_gain.shape[1]
            self._gain_pinv = np.linalg.pinv(self.noise_gain)
        if uniform_dynamics and estimate_process:
            raise ValueError("dynamics cannot stay mode-independent while process noise is estimated")
        # promises used for fast paths: uniform_dynamics means f_k (map AND
        # noise parameters) is the same for every mode; uniform_meas_map means
        # the measurement map (not the noise) is mode-independent AND the
        # density is exactly the Gaussian form (subclasses overriding
        # log_meas_density must leave it unset)
        self.mode_independent_dynamics = bool(uniform_dynamics)
        self.uniform_meas_map = bool(uniform_meas_map)
        self.suffstat_needs_prev = self.estimate_process

    # ----- maps supplied by subclasses -----

    def drift(self, k, x, t):
        raise NotImplementedError

    def meas(self, k, x, t):
        raise NotImplementedError

    # ----- densities and samplers -----

    def log_trans_density(self, k, x_next, x_prev, theta_k, t):
        resid = np.asarray(x_next, dtype=float) - self.drift(k, np.asarray(x_prev, dtype=float), t)
        if self.noise_gain is None:
            return mvn_logpdf(resid, theta_k.mu_v, theta_k.Sigma_v)
        v = resid @ self._gain_pinv.T
        recon = v @ self.noise_gain.T
        gap = np.max(np.abs(recon - resid), axis=-1)
        scale = 1.0 + np.max(np.abs(resid), axis=-1)
        out = mvn_logpdf(v, theta_k.mu_v, theta_k.Sigma_v)
        return np.where(gap <= 1e-8 * scale, out, -np.inf)

    def log_meas_density(self, k, y, x, theta_k, t):
        resid = np.asarray(y, dtype=float) - self.meas(k, np.asarray(x, dtype=float), t)
        return mvn_logpdf(resid, theta_k.mu_e, theta_k.Sigma_e)

    def sample_transition(self, k, x_prev, theta_k, t, rng):
        x_prev = np.asarray(x_prev, dtype=float)
        mean = self.drift(k, x_prev, t)
        z = rng.standard_normal(x_prev.shape[:-1] + (self.noise_dim,))
        if self.noise_dim == 1:
            v = theta_k.mu_v + z * math.sqrt(theta_k.Sigma_v[0, 0])
        else:
            v = theta_k.mu_v + z @ np.linalg.cholesky(theta_k.Sigma_v).T
        if self.noise_gain is None:
            return mean + v
        return mean + v @ self.noise_gain.T

    def sample_measurement(self, k, x, theta_k, t, rng):
        x = np.asarray(x, dtype=float)
        mean = self.meas(k, x, t)
        z = rng.standard_normal(x.shape[:-1] + (self.meas_dim,))
        if self.meas_dim == 1:
            return mean + theta_k.mu_e + z * math.sqrt(theta_k.Sigma_e[0, 0])
        return mean + theta_k.mu_e + z @ np.linalg.cholesky(theta_k.Sigma_e).T

    # ----- sufficient statistics and maximizer -----

    # ----- batched-by-mode fast paths (scalar measurement channel) -----

    def log_meas_density_table(self, y, x, theta: Theta, t):
        if not (self.uniform_meas_map and self.meas_dim == 1):
            return super().log_meas_density_table(y, x, theta, t)
        resid = np.asarray(y, dtype=float)[..., 0] - self.meas(0, x, t)[..., 0]
        mu = np.array([p.mu_e[0] for p in theta.mode_params])
        var = np.array([p.Sigma_e[0, 0] for p in theta.mode_params])
        z = resid[..., None] - mu
        return -0.5 * (z * z / var + _LOG_2PI + np.log(var))

    def log_meas_density_modes(self, r, y, x, theta: Theta, t):
        if not (self.uniform_meas_map and self.meas_dim == 1):
            return super().log_meas_density_modes(r, y, x, theta, t)
        resid = np.asarray(y, dtype=float)[..., 0] - self.meas(0, x, t)[..., 0]
        mu = np.array([p.mu_e[0] for p in theta.mode_params])
        var = np.array([p.Sigma_e[0, 0] for p in theta.mode_params])
        z = resid - mu[r]
        v = var[r]
        return -0.5 * (z * z / v + _LOG_2PI + np.log(v))

    def sample_transition_modes(self, r, x_prev, theta: Theta, t, rng):
        if self.mode_independent_dynamics:
            return self.sample_transition(0, x_prev, theta.mode_params[0], t, rng)
        return super().sample_transition_modes(r, x_prev, theta, t, rng)

    def suffstat_modes(self, r, y, x_next, x_prev, t):
        if not (self.uniform_meas_map and self.meas_dim == 1
                and self.estimate_measurement and not self.estimate_process):
            return super().suffstat_modes(r, y, x_next, x_prev, t)
        resid = np.asarray(y, dtype=float)[..., 0] - self.meas(0, x_next, t)[..., 0]
        return np.stack([resid, resid * resid], axis=-1)

    def suffstat(self, k, y, x_next, x_prev, t):
        x_next = np.asarray(x_next, dtype=float)
        x_prev = np.asarray(x_prev, dtype=float)
        blocks = []
        if self.estimate_process:
            resid = x_next - self.drift(k, x_prev, t)
            if self.noise_gain is not None:
                resid = resid @ self._gain_pinv.T
            blocks.extend([resid, _outer_flat(resid)])
        if self.estimate_measurement:
            re = np.asarray(y, dtype=float) - self.meas(k, x_next, t)
            blocks.extend([re, _outer_flat(re)])
        if not blocks:
            shape = np.broadcast_shapes(x_next.shape[:-1], x_prev.shape[:-1])
            return np.zeros(shape + (0,))
        if len(blocks) == 4:
            shape = np.broadcast_shapes(blocks[0].shape[:-1], blocks[2].shape[:-1])
            blocks = [np.broadcast_to(b, shape + b.shape[-1:]) for b in blocks]
        return np.concatenate(blocks, axis=-1)

    def suffstat_dim(self, k) -> int:
        dim = 0
        if self.estimate_process:
            dim += self.noise_dim + self.noise_dim ** 2
        if self.estimate_measurement:
            dim += self.meas_dim + self.meas_dim ** 2
        return dim

    def maximizer(self, k, s3_k, s2_k, config: FeasibilityConfig) -> GaussianModeParams:
        base = self.fixed_params[k]
        mu_v, Sigma_v = base.mu_v, base.Sigma_v
        mu_e, Sigma_e = base.mu_e, base.Sigma_e
        off = 0
        if self.estimate_process:
            dv = self.noise_dim
            mu_v, Sigma_v = gaussian_channel_maximizer(s3_k[:dv], s3_k[dv:dv + dv * dv], s2_k, config)
            off = dv + dv * dv
        if self.estimate_measurement:
            dy = self.meas_dim
            mu_e, Sigma_e = gaussian_channel_maximizer(
                s3_k[off:off + dy], s3_k[off + dy:off + dy + dy * dy], s2_k, config)
        return GaussianModeParams(mu_v, Sigma_v, mu_e, Sigma_e)

    def complete_data_score(self, k, theta_k, stats: SuffStats) -> float:
        s3 = stats.s3[k]
        count = float(stats.s2[k])
        score = 0.0
        off = 0
        if self.estimate_process:
            dv = self.noise_dim
            score += gaussian_channel_score(s3[:dv], s3[dv:dv + dv * dv], count,
                                            theta_k.mu_v, theta_k.Sigma_v)
            off = dv + dv * dv
        if self.estimate_measurement:
            dy = self.meas_dim
            score += gaussian_channel_score(s3[off:off + dy], s3[off + dy:off + dy + dy * dy],
                                            count, theta_k.mu_e, theta_k.Sigma_e)
        return score

    # ----- parameter flattening -----

    def _channel_names(self, tag: str, k: int, dim: int) -> list:
        if dim == 1:
            return [f"mu_{tag}_{k}", f"Sigma_{tag}_{k}"]
        names = [f"mu_{tag}_{k}_{i}" for i in range(dim)]
        names += [f"Sigma_{tag}_{k}_{i}_{j}" for i in range(dim) for j in range(dim)]
        return names

    def mode_param_names(self, k) -> list:
        names = []
        if self.estimate_process:
            names += self._channel_names("v", k, self.noise_dim)
        if self.estimate_measurement:
            names += self._channel_names("e", k, self.meas_dim)
        return names

    def mode_param_vector(self, k, theta_k) -> np.ndarray:
        parts = []
        if self.estimate_process:
            parts += [theta_k.mu_v, theta_k.Sigma_v.reshape(-1)]
        if self.estimate_measurement:
            parts += [theta_k.mu_e, theta_k.Sigma_e.reshape(-1)]
        if not parts:
            return np.empty(0)
        return np.concatenate(parts)
