"""Forward-only smoothing of additive statistics over a particle system.

Each particle i carries, for every mode l, an intermediate vector
T[i, l] approximating the conditional expectation of the accumulated
statistic given the current joint state (x_i, mode l).  Two update rules are
provided:

* :func:`fs_update` mixes over all previous particles and modes through an
  empirical backward kernel (cost K^2 N^2 per step, lower variance);
* :func:`path_update` restricts the kernel to the actual resampled ancestor
  of each particle (cost K^2 N per step, subject to path degeneracy).

Both apply stochastic-approximation forgetting: the previous statistic is
scaled by (1 - gamma) and the new per-step statistic enters with weight
gamma, so a first step size of 1 makes the indicator blocks of the
aggregated statistic sum to one forever.
"""

from __future__ import annotations

import numpy as np

from .model import ModelSpec, StatLayout, SuffStats, Theta
from .rbpf import ParticleSystem


def stack_stat(k_prev: int, l_next: int, y, x_next, x_prev,
               model: ModelSpec, layout: StatLayout, t) -> np.ndarray:
    """Flat per-step statistic for one (previous mode, next mode) pair.

    One-hot transition-pair block, one-hot occupancy block, and the model's
    mode-l statistic in the l-th slot; all other slots zero.
    """
    vec = np.zeros(layout.dim)
    vec[layout.s1_index(k_prev, l_next)] = 1.0
    vec[layout.s2_index(l_next)] = 1.0
    vec[layout.s3_slice(l_next)] = model.suffstat(l_next, y, x_next, x_prev, t)
    return vec


def _fallback_row(alpha: np.ndarray, tstat: np.ndarray, weights=None) -> np.ndarray:
    """Mode-weighted (and optionally particle-weighted) average of previous
    intermediate statistics; used for modes with zero reachable mass."""
    per_particle = np.einsum("jk,jkd->jd", alpha, tstat)
    if weights is None:
        return per_particle
    return weights @ per_particle


def _one_hot_block_indices(layout: StatLayout):
    return layout.pair_k, layout.pair_l, layout.pair_flat


def fs_update(x_prev: np.ndarray, log_w_prev: np.ndarray, alpha_prev: np.ndarray,
              tstat_prev: np.ndarray, x_new: np.ndarray, y, theta: Theta,
              gamma: float, model: ModelSpec, layout: StatLayout, t):
    """Full-mixture update of the intermediate statistics.

    For each new particle i and mode l, the previous joint states (j, k) are
    weighted by f_l(x_i | x_j) * pi[k, l] * alpha_prev[j, k] * w_j, normalized
    over (j, k), and the forgetting recursion is averaged under those
    weights.  Weight arithmetic is done in the log domain with per-(i, l)
    max-subtraction.

    Returns (new tstat (N, K, D), number of unreachable (i, l) rows that fell
    back to the weighted average of the previous statistics).
    """
    n_new = x_new.shape[0]
    K = layout.num_modes
    D = layout.dim
    y = np.atleast_1d(np.asarray(y, dtype=float))

    # mode-pair mass per previous particle: b[j, k, l] = pi[k, l] * alpha_prev[j, k]
    b = theta.tpm[None, :, :] * alpha_prev[:, :, None]
    c = b.sum(axis=1)                                   # (N_prev, K): predicted mode mass
    # V[j, l] = (1 - gamma) * sum_k b[j,k,l] T_prev[j,k] + gamma * (one-hot parts)
    V = (1.0 - gamma) * (b.transpose(0, 2, 1) @ tstat_prev)
    k_flat, l_flat, s1_flat = _one_hot_block_indices(layout)
    V[:, l_flat, s1_flat] += gamma * b[:, k_flat, l_flat]
    V[:, layout.mode_arange, layout.s2_positions] += gamma * c

    tstat_new = np.empty((n_new, K, D))
    fallback = None
    n_fallback = 0
    logf_shared = None
    for l in range(K):
        if model.mode_independent_dynamics:
            if logf_shared is None:
                logf_shared = model.log_trans_density(
                    0, x_new[:, None, :], x_prev[None, :, :], theta.mode_params[0], t)
            logf = logf_shared
        else:
            logf = model.log_trans_density(
                l, x_new[:, None, :], x_prev[None, :, :], theta.mode_params[l], t)
        log_a = logf + log_w_prev[None, :]              # (N_new, N_prev)
        m = np.max(log_a, axis=1, keepdims=True)
        a = np.exp(log_a - np.where(np.isfinite(m), m, 0.0))
        ac = a * c[None, :, l]
        z = ac.sum(axis=1)                              # (N_new,)
        ok = z > 0.0
        zsafe = np.where(ok, z, 1.0)

        rows = (a @ V[:, l, :]) / zsafe[:, None]
        d_l = layout.stat_dims[l]
        if d_l:
            if model.suffstat_needs_prev:
                s3 = model.suffstat(l, y, x_new[:, None, :], x_prev[None, :, :], t)
                s3 = np.broadcast_to(s3, (n_new, x_prev.shape[0], d_l))
                rows[:, layout.s3_slice(l)] += gamma * (
                    np.einsum("ij,ijd->id", ac, s3) / zsafe[:, None])
            else:
                # backward weights sum to one, so a prev-independent statistic
                # passes through the mixture unchanged
                rows[:, layout.s3_slice(l)] += gamma * model.suffstat(
                    l, y, x_new, x_new, t)
        if not np.all(ok):
            if fallback is None:
                fallback = (1.0 - gamma) * _fallback_row(alpha_prev, tstat_prev,
                                                         np.exp(log_w_prev))
            rows[~ok] = fallback
            n_fallback += int(np.sum(~ok))
        tstat_new[:, l, :] = rows
    return tstat_new, n_fallback


def path_update(x_tilde: np.ndarray, alpha_tilde: np.ndarray, tstat_tilde: np.ndarray,
                x_new: np.ndarray, y, theta: Theta, gamma: float,
                model: ModelSpec, layout: StatLayout, t):
    """Ancestor-path update of the intermediate statistics.

    Each new particle i mixes only over the previous mode k of its resampled
    ancestor, with weights pi[k, l] * alpha_tilde[i, k] normalized over k
    (the transition density factors cancel in that normalization).

    Returns (new tstat (N, K, D), number of unreachable (i, l) rows).
    """
    n = x_new.shape[0]
    K = layout.num_modes
    y = np.atleast_1d(np.asarray(y, dtype=float))

    bw = theta.tpm[None, :, :] * alpha_tilde[:, :, None]    # (N, K, K): [i, k, l]
    den = bw.sum(axis=1)                                    # (N, K) = predicted mode mass
    ok = den > 0.0
    w_bk = bw / np.where(ok, den, 1.0)[:, None, :]

    tstat_new = (1.0 - gamma) * (w_bk.transpose(0, 2, 1) @ tstat_tilde)
    k_flat, l_flat, s1_flat = _one_hot_block_indices(layout)
    tstat_new[:, l_flat, s1_flat] += gamma * w_bk[:, k_flat, l_flat]
    tstat_new[:, layout.mode_arange, layout.s2_positions] += gamma
    for l in range(K):
        d_l = layout.stat_dims[l]
        if d_l:
            tstat_new[:, l, layout.s3_slice(l)] += gamma * model.suffstat(
                l, y, x_new, x_tilde, t)

    n_fallback = int(np.sum(~ok))
    if n_fallback:
        fb = (1.0 - gamma) * _fallback_row(alpha_tilde, tstat_tilde)
        i_bad, l_bad = np.nonzero(~ok)
        tstat_new[i_bad, l_bad, :] = fb[i_bad]
    return tstat_new, n_fallback


def aggregate(weights: np.ndarray, alpha: np.ndarray, tstat: np.ndarray,
              layout: StatLayout) -> SuffStats:
    """Filtered expectation of the intermediate statistics, unstacked."""
    mass = (weights[:, None] * alpha).reshape(-1)
    vec = mass @ tstat.reshape(-1, layout.dim)
    return layout.unpack(vec)


def aggregate_system(system: ParticleSystem, layout: StatLayout) -> SuffStats:
    return aggregate(system.weights, system.alpha, system.tstat, layout)
