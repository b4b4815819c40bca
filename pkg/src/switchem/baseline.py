"""Baseline particle filters that sample the mode inside each particle.

These estimators share resampling, step-size scheduling, the parameter
update and the record schema with the Rao-Blackwellized path, so comparisons
between the two families isolate the effect of marginalizing the mode.  The
per-particle intermediate statistic is a single flat vector (the sampled mode
replaces the per-mode rows).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import InitialCondition, ModelSpec, StatLayout, SuffStats, Theta, mstep
from .rbpf import (Estimate, FilterCollapseError, ess, logsumexp,
                   systematic_resample_indices)
from .smoothing import _one_hot_block_indices


@dataclass
class JointParticleSystem:
    """Particles over the joint (continuous state, mode) space.

    ``r`` holds the sampled mode of each particle; ``tstat`` (N, D) the
    running flat intermediate statistic.
    """

    x: np.ndarray
    r: np.ndarray
    log_w: np.ndarray
    tstat: np.ndarray
    num_modes: int = 1
    t: int = 0
    last_resampled: bool = False

    @property
    def num_particles(self) -> int:
        return self.x.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_w)


def init_joint_system(model: ModelSpec, layout: StatLayout, num_particles: int,
                      init: InitialCondition, rng: np.random.Generator) -> JointParticleSystem:
    n = int(num_particles)
    x0 = init.draw_states(n, rng)
    dist = init.mode_dist(model.num_modes)
    if init.mode is not None:
        r0 = np.full(n, init.mode, dtype=np.intp)
    else:
        cum = np.cumsum(dist)
        cum[-1] = 1.0
        r0 = np.searchsorted(cum, rng.random(n), side="right").astype(np.intp)
        r0 = np.minimum(r0, model.num_modes - 1)
    log_w = np.full(n, -np.log(n))
    tstat = np.zeros((n, layout.dim))
    return JointParticleSystem(x=x0, r=r0, log_w=log_w, tstat=tstat,
                               num_modes=model.num_modes)


@dataclass
class JointStepContext:
    """Pre-resampling system plus the ancestor alignment of the new particles."""

    prev: JointParticleSystem
    ancestors: np.ndarray
    resampled: bool

    @property
    def resampled_x(self) -> np.ndarray:
        return self.prev.x[self.ancestors]

    @property
    def resampled_r(self) -> np.ndarray:
        return self.prev.r[self.ancestors]

    @property
    def resampled_tstat(self) -> np.ndarray:
        return self.prev.tstat[self.ancestors]


def pf_step(system: JointParticleSystem, y, theta: Theta, model: ModelSpec,
            resample_threshold: float = 0.5, rng: Optional[np.random.Generator] = None):
    """Bootstrap step on the joint space: sample the next mode from the chain
    row of the (resampled) ancestor, the state from that mode's transition
    density, and weight by the measurement likelihood."""
    if rng is None:
        rng = np.random.default_rng()
    n = system.num_particles
    K = model.num_modes
    t = system.t + 1
    y = np.atleast_1d(np.asarray(y, dtype=float))

    w = system.weights
    if resample_threshold >= 1.0 or ess(w) < resample_threshold * n:
        u = rng.uniform(0.0, 1.0 / n)
        ancestors = systematic_resample_indices(w, u)
        log_w_tilde = np.full(n, -np.log(n))
        resampled = True
    else:
        ancestors = np.arange(n)
        log_w_tilde = system.log_w
        resampled = False

    x_tilde = system.x[ancestors]
    r_tilde = system.r[ancestors]

    if K == 1:
        r_new = np.zeros(n, dtype=np.intp)
    else:
        rows = theta.tpm[r_tilde]
        cum = np.cumsum(rows, axis=-1)
        cum[:, -1] = 1.0
        r_new = np.sum(rng.random((n, 1)) > cum, axis=-1).astype(np.intp)

    x_new = model.sample_transition_modes(r_new, x_tilde, theta, t, rng)
    log_g = model.log_meas_density_modes(r_new, y, x_new, theta, t)

    log_w_new = log_w_tilde + log_g
    norm = logsumexp(log_w_new, axis=-1)
    if not np.isfinite(norm):
        raise FilterCollapseError(t, "all particles have zero weight")
    log_w_new = log_w_new - norm

    new_system = JointParticleSystem(x=x_new, r=r_new, log_w=log_w_new,
                                     tstat=system.tstat[ancestors],
                                     num_modes=K, t=t, last_resampled=resampled)
    return new_system, JointStepContext(prev=system, ancestors=ancestors, resampled=resampled)


# ---------------------------------------------------------------------------
# statistic updates (sampled-mode specializations of the smoothing rules)
# ---------------------------------------------------------------------------

def pf_path_update(x_tilde, r_tilde, tstat_tilde, x_new, r_new, y, gamma: float,
                   model: ModelSpec, layout: StatLayout, t) -> np.ndarray:
    """Ancestor-path recursion: forget, then add the one-hot blocks and the
    sampled-mode statistic of the (ancestor, offspring) pair."""
    n = x_new.shape[0]
    K = layout.num_modes
    y = np.atleast_1d(np.asarray(y, dtype=float))
    tstat = (1.0 - gamma) * tstat_tilde
    rows = np.arange(n)
    tstat[rows, r_tilde * K + r_new] += gamma
    tstat[rows, K * K + r_new] += gamma
    d = layout.stat_dims[0]
    if d and len(set(layout.stat_dims)) == 1:
        s3 = model.suffstat_modes(r_new, y, x_new, x_tilde, t)
        offs = np.asarray(layout.s3_offsets)[r_new]
        for c in range(d):
            tstat[rows, offs + c] += gamma * s3[:, c]
    else:
        for k in range(K):
            sel = r_new == k
            if np.any(sel) and layout.stat_dims[k]:
                tstat[sel, layout.s3_slice(k)] += gamma * model.suffstat(
                    k, y, x_new[sel], x_tilde[sel], t)
    return tstat


def pf_fs_update(x_prev, r_prev, log_w_prev, tstat_prev, x_new, r_new, y,
                 theta: Theta, gamma: float, model: ModelSpec,
                 layout: StatLayout, t) -> np.ndarray:
    """Full-mixture recursion over the previous joint particles.

    Backward weights are f_{r_i}(x_i | x_j) * pi[r_j, r_i] * w_j normalized
    over j for each new particle i.
    """
    n = x_new.shape[0]
    n_prev = x_prev.shape[0]
    K = layout.num_modes
    y = np.atleast_1d(np.asarray(y, dtype=float))
    tstat = np.empty((n, layout.dim))
    prev_mode_onehot = np.zeros((n_prev, K))
    prev_mode_onehot[np.arange(n_prev), r_prev] = 1.0

    with np.errstate(divide="ignore"):
        log_pi = np.log(theta.tpm)

    logf_shared = None
    if model.mode_independent_dynamics:
        logf_shared = model.log_trans_density(
            0, x_new[:, None, :], x_prev[None, :, :], theta.mode_params[0], t)

    fallback = None
    for k in range(K):
        sel = r_new == k
        if not np.any(sel):
            continue
        if logf_shared is not None:
            logf = logf_shared[sel]
        else:
            logf = model.log_trans_density(
                k, x_new[sel][:, None, :], x_prev[None, :, :], theta.mode_params[k], t)
        log_bw = logf + log_pi[r_prev, k][None, :] + log_w_prev[None, :]
        m = np.max(log_bw, axis=1, keepdims=True)
        bw = np.exp(log_bw - np.where(np.isfinite(m), m, 0.0))
        z = bw.sum(axis=1)
        ok = z > 0.0
        bw /= np.where(ok, z, 1.0)[:, None]

        rows = bw @ ((1.0 - gamma) * tstat_prev)
        mass_by_prev_mode = bw @ prev_mode_onehot                 # (n_sel, K)
        rows[:, np.arange(K) * K + k] += gamma * mass_by_prev_mode
        rows[:, K * K + k] += gamma
        d_k = layout.stat_dims[k]
        if d_k:
            if model.suffstat_needs_prev:
                s3 = model.suffstat(k, y, x_new[sel][:, None, :], x_prev[None, :, :], t)
                s3 = np.broadcast_to(s3, (int(sel.sum()), n_prev, d_k))
                rows[:, layout.s3_slice(k)] += gamma * np.einsum("ij,ijd->id", bw, s3)
            else:
                rows[:, layout.s3_slice(k)] += gamma * model.suffstat(
                    k, y, x_new[sel], x_new[sel], t)
        if not np.all(ok):
            if fallback is None:
                fallback = (1.0 - gamma) * (np.exp(log_w_prev) @ tstat_prev)
            rows[~ok] = fallback
        tstat[sel] = rows
    return tstat


def aggregate_joint(weights: np.ndarray, tstat: np.ndarray, layout: StatLayout) -> SuffStats:
    return layout.unpack(weights @ tstat)


def pf_estimate(system: JointParticleSystem) -> Estimate:
    w = system.weights
    state_mean = w @ system.x
    mode_marginal = np.bincount(system.r, weights=w, minlength=system.num_modes)
    return Estimate(state_mean, mode_marginal, int(np.argmax(mode_marginal)))


def baseline_em_step(state, y, config, model: ModelSpec, layout: StatLayout,
                     rng: np.random.Generator):
    """Joint-particle counterpart of the Rao-Blackwellized EM step."""
    from .online_em import FORWARD_SMOOTHING, EstimatorState

    theta = state.theta
    t = state.system.t + 1
    gamma = config.schedule.gamma(t)

    system, ctx = pf_step(state.system, y, theta, model, config.resample_threshold, rng)
    if config.smoother == FORWARD_SMOOTHING:
        tstat = pf_fs_update(ctx.prev.x, ctx.prev.r, ctx.prev.log_w, ctx.prev.tstat,
                             system.x, system.r, y, theta, gamma, model, layout, t)
    else:
        tstat = pf_path_update(ctx.resampled_x, ctx.resampled_r, ctx.resampled_tstat,
                               system.x, system.r, y, gamma, model, layout, t)
    system.tstat = tstat
    stats = aggregate_joint(system.weights, tstat, layout)

    if t >= config.burn_in and t % config.update_period == 0:
        theta = mstep(stats, theta, model, config.feasibility)
    return EstimatorState(theta=theta, system=system, stats=stats)
