"""Rao-Blackwellized particle filter for regime-switching state-space models.

The continuous state is represented by weighted particles while the discrete
mode is marginalized exactly: each particle carries a conditional mode
distribution ``alpha`` propagated by a per-particle forward recursion over the
mode chain.  Because the sampled state trajectory acts as an extra
measurement on the mode, the mode posterior update multiplies the measurement
likelihood, the state transition density and the predicted mode probability
before normalizing.

Particle systems are stored struct-of-arrays; all density arithmetic is in
the log domain with max-subtraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .model import InitialCondition, ModelSpec, StatLayout, Theta


class FilterCollapseError(RuntimeError):
    """Raised when every particle has zero weight."""

    def __init__(self, t: int, message: str = "", diagnostics: Optional[dict] = None):
        self.t = t
        self.diagnostics = diagnostics or {}
        super().__init__(f"particle filter collapsed at t={t}" + (f": {message}" if message else ""))


class DegenerateParticleError(ValueError):
    """A particle whose mode posterior has zero mass in every mode."""


def logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """Log-sum-exp with max-subtraction; all -inf reduces to -inf silently."""
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis))
    return out + np.squeeze(m, axis=axis)


# ---------------------------------------------------------------------------
# particle system
# ---------------------------------------------------------------------------

@dataclass
class ParticleSystem:
    """Weighted particles with per-particle conditional mode distributions.

    ``x`` (N, d_x) current states, ``x_prev`` (N, d_x) the states the current
    ones were proposed from (needed to evaluate transition statistics),
    ``log_w`` (N,) normalized log weights, ``alpha`` (N, K) conditional mode
    probabilities, ``tstat`` (N, K, D) running per-mode intermediate
    statistics owned by the smoothing layer.
    """

    x: np.ndarray
    log_w: np.ndarray
    alpha: np.ndarray
    tstat: np.ndarray
    x_prev: np.ndarray = None
    t: int = 0
    last_resampled: bool = False

    def __post_init__(self):
        if self.x_prev is None:
            self.x_prev = self.x

    @property
    def num_particles(self) -> int:
        return self.x.shape[0]

    @property
    def num_modes(self) -> int:
        return self.alpha.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_w)


def init_system(model: ModelSpec, layout: StatLayout, num_particles: int,
                init: InitialCondition, rng: np.random.Generator) -> ParticleSystem:
    """Fresh particle system at t=0 with zero intermediate statistics."""
    n = int(num_particles)
    x0 = init.draw_states(n, rng)
    alpha0 = np.tile(init.mode_dist(model.num_modes), (n, 1))
    log_w = np.full(n, -np.log(n))
    tstat = np.zeros((n, model.num_modes, layout.dim))
    return ParticleSystem(x=x0, log_w=log_w, alpha=alpha0, tstat=tstat)


# ---------------------------------------------------------------------------
# elementary operations
# ---------------------------------------------------------------------------

def predict_mode_probs(alpha: np.ndarray, tpm: np.ndarray) -> np.ndarray:
    """Propagate mode probabilities one step through the chain.

    ``alpha`` may be a single length-K vector or a batch (..., K); the
    result's component l is sum_k tpm[k, l] * alpha[..., k].
    """
    return np.asarray(alpha, dtype=float) @ tpm


def gamma_table(x_next, x_prev, y, alpha_pred, theta: Theta, model: ModelSpec, t) -> np.ndarray:
    """Per-mode log joint density of (y, x_next) given the predicted mode mass.

    Entry l is log g_l(y | x_next) + log f_l(x_next | x_prev) +
    log alpha_pred[l]; -inf entries are legitimate (zero prior mode mass or
    zero density).  Broadcasts over leading dimensions of the states.
    """
    alpha_pred = np.asarray(alpha_pred, dtype=float)
    K = model.num_modes
    with np.errstate(divide="ignore"):
        la = np.log(alpha_pred)
    cols = []
    logf_shared = None
    for l in range(K):
        if model.mode_independent_dynamics:
            if logf_shared is None:
                logf_shared = model.log_trans_density(0, x_next, x_prev, theta.mode_params[0], t)
            logf = logf_shared
        else:
            logf = model.log_trans_density(l, x_next, x_prev, theta.mode_params[l], t)
        logg = model.log_meas_density(l, y, x_next, theta.mode_params[l], t)
        cols.append(logg + logf + la[..., l])
    return np.stack(cols, axis=-1)


def _normalize_log_rows(log_table: np.ndarray):
    """Rows normalized to probabilities; all -inf rows become uniform and are
    flagged in the returned mask.  Also returns the per-row log normalizer
    (reused by the weight update)."""
    m = np.max(log_table, axis=-1, keepdims=True)
    dead = ~np.isfinite(m[..., 0])
    m_safe = np.where(np.isfinite(m), m, 0.0)
    g = np.exp(log_table - m_safe)
    total = g.sum(axis=-1, keepdims=True)
    K = log_table.shape[-1]
    probs = np.where(dead[..., None], 1.0 / K, g / np.where(total > 0, total, 1.0))
    with np.errstate(divide="ignore"):
        log_norm = np.log(total[..., 0]) + m_safe[..., 0]
    log_norm = np.where(dead, -np.inf, log_norm)
    return probs, dead, log_norm


def update_mode_probs(log_gamma: np.ndarray) -> np.ndarray:
    """Normalize a per-mode log table into mode probabilities.

    Raises :class:`DegenerateParticleError` when every entry of a row is
    -inf.
    """
    probs, dead, _ = _normalize_log_rows(np.asarray(log_gamma, dtype=float))
    if np.any(dead):
        raise DegenerateParticleError("mode posterior has zero mass in every mode")
    return probs


def weight_update(log_w_prev, log_gamma, log_q) -> np.ndarray:
    """Importance-weight recursion: previous log weight plus the log of the
    mode-summed joint density, minus the proposal log density.

    A degenerate particle (all modes at -inf) gets weight -inf and is killed
    at normalization.
    """
    return np.asarray(log_w_prev, dtype=float) + logsumexp(log_gamma, axis=-1) - np.asarray(log_q, dtype=float)


def ess(weights: np.ndarray) -> float:
    """Effective sample size 1 / sum(w^2) of normalized weights; in [1, N]."""
    w = np.asarray(weights, dtype=float)
    return 1.0 / float(np.sum(w * w))


def systematic_resample_indices(weights: np.ndarray, u: float) -> np.ndarray:
    """Ancestor indices from systematic resampling with offset ``u``.

    ``u`` lies in [0, 1/N); stratum i looks up position u + i/N in the
    cumulative weight profile, so the expected offspring count of particle j
    is N * w_j.
    """
    w = np.asarray(weights, dtype=float)
    n = w.shape[0]
    positions = u + np.arange(n) / n
    cum = np.cumsum(w)
    cum[-1] = 1.0
    idx = np.searchsorted(cum, positions, side="right")
    return np.minimum(idx, n - 1)


def systematic_resample(system: ParticleSystem, rng: np.random.Generator) -> ParticleSystem:
    """Resampled copy of the system: offspring inherit state, mode
    distribution and intermediate statistics; weights reset to uniform."""
    n = system.num_particles
    u = rng.uniform(0.0, 1.0 / n)
    idx = systematic_resample_indices(system.weights, u)
    return ParticleSystem(
        x=system.x[idx],
        log_w=np.full(n, -np.log(n)),
        alpha=system.alpha[idx],
        tstat=system.tstat[idx],
        x_prev=system.x_prev[idx],
        t=system.t,
        last_resampled=True,
    )


# ---------------------------------------------------------------------------
# proposals
# ---------------------------------------------------------------------------

class Proposal:
    """Proposal kernel interface for the continuous state."""

    def sample(self, x_prev, alpha_pred, y, theta, t, rng):
        raise NotImplementedError

    def log_density(self, x, x_prev, alpha_pred, y, theta, t):
        raise NotImplementedError


class BootstrapProposal(Proposal):
    """Proposes from the predicted-mode mixture of transition densities.

    A mode index is drawn from the predicted mode probabilities and the state
    from that mode's transition density; the reported density is the full
    mixture, not the selected branch.
    """

    def __init__(self, model: ModelSpec):
        self.model = model

    def sample(self, x_prev, alpha_pred, y, theta: Theta, t, rng):
        x_prev = np.asarray(x_prev, dtype=float)
        n = x_prev.shape[0]
        K = self.model.num_modes
        if K == 1 or self.model.mode_independent_dynamics:
            # all mixture components are the same density; no need to pick one
            return self.model.sample_transition(0, x_prev, theta.mode_params[0], t, rng)
        cum = np.cumsum(alpha_pred, axis=-1)
        cum[..., -1] = 1.0
        u = rng.random((n, 1))
        modes = np.sum(u > cum, axis=-1)
        x = np.empty_like(x_prev)
        for k in range(K):
            sel = modes == k
            if np.any(sel):
                x[sel] = self.model.sample_transition(k, x_prev[sel], theta.mode_params[k], t, rng)
        return x

    def log_density(self, x, x_prev, alpha_pred, y, theta: Theta, t):
        logf = transition_logdensity_table(self.model, x, x_prev, theta, t)
        with np.errstate(divide="ignore"):
            la = np.log(np.asarray(alpha_pred, dtype=float))
        return logsumexp(la + logf, axis=-1)


def transition_logdensity_table(model: ModelSpec, x_next, x_prev, theta: Theta, t) -> np.ndarray:
    """Per-mode transition log densities, shape (..., K).

    Evaluated once and broadcast when the dynamics are mode-independent.
    """
    if model.mode_independent_dynamics:
        one = model.log_trans_density(0, x_next, x_prev, theta.mode_params[0], t)
        return np.broadcast_to(one[..., None], one.shape + (model.num_modes,))
    cols = [model.log_trans_density(l, x_next, x_prev, theta.mode_params[l], t)
            for l in range(model.num_modes)]
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# one filter step
# ---------------------------------------------------------------------------

@dataclass
class StepContext:
    """Everything the smoothing layer needs about one filter transition.

    ``prev`` is the particle system before resampling (its weights appear in
    the full backward-kernel mixture); the ``resampled_*`` views are the
    post-resampling ancestors aligned with the new particles (used by the
    ancestor-path update).
    """

    prev: ParticleSystem
    ancestors: np.ndarray
    alpha_pred: np.ndarray
    resampled: bool

    @property
    def resampled_x(self) -> np.ndarray:
        return self.prev.x[self.ancestors]

    @property
    def resampled_alpha(self) -> np.ndarray:
        return self.prev.alpha[self.ancestors]

    @property
    def resampled_tstat(self) -> np.ndarray:
        return self.prev.tstat[self.ancestors]


def rbpf_step(system: ParticleSystem, y, theta: Theta, model: ModelSpec,
              proposal: Optional[Proposal] = None, resample_threshold: float = 0.5,
              rng: Optional[np.random.Generator] = None):
    """Advance the filter one step; returns (new system, step context).

    Order of operations: conditional systematic resampling on the previous
    weights (triggered when ESS < threshold * N; a threshold >= 1 forces it
    every step), per-particle mode prediction, state proposal, mode posterior
    update, importance-weight update, global normalization.  Particles whose
    mode posterior has no mass anywhere get weight zero; the step fails with
    :class:`FilterCollapseError` only if the total weight vanishes.
    """
    if proposal is None:
        proposal = BootstrapProposal(model)
    if rng is None:
        rng = np.random.default_rng()
    n = system.num_particles
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
    alpha_tilde = system.alpha[ancestors]
    alpha_pred = predict_mode_probs(alpha_tilde, theta.tpm)

    x_new = proposal.sample(x_tilde, alpha_pred, y, theta, t, rng)

    with np.errstate(divide="ignore"):
        la = np.log(alpha_pred)
    logf = transition_logdensity_table(model, x_new, x_tilde, theta, t)
    logg = model.log_meas_density_table(y, x_new, theta, t)
    mix = la + logf                      # log of alpha_pred-weighted dynamics
    log_gamma = mix + logg
    if isinstance(proposal, BootstrapProposal):
        log_q = logsumexp(mix, axis=-1)
    else:
        log_q = proposal.log_density(x_new, x_tilde, alpha_pred, y, theta, t)

    alpha_new, dead, log_gamma_sum = _normalize_log_rows(log_gamma)
    log_w_new = log_w_tilde + log_gamma_sum - log_q

    norm = logsumexp(log_w_new, axis=-1)
    if not np.isfinite(norm):
        raise FilterCollapseError(t, "all particles have zero weight",
                                  {"num_degenerate": int(dead.sum())})
    log_w_new = log_w_new - norm

    new_system = ParticleSystem(
        x=x_new,
        log_w=log_w_new,
        alpha=alpha_new,
        tstat=system.tstat[ancestors],
        x_prev=x_tilde,
        t=t,
        last_resampled=resampled,
    )
    ctx = StepContext(prev=system, ancestors=ancestors, alpha_pred=alpha_pred, resampled=resampled)
    return new_system, ctx


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Estimate:
    state_mean: np.ndarray
    mode_marginal: np.ndarray
    map_mode: int


def estimate(system: ParticleSystem) -> Estimate:
    """Weighted posterior summaries: state mean, mode marginal, MAP mode
    (ties break toward the lowest index)."""
    w = system.weights
    state_mean = w @ system.x
    mode_marginal = w @ system.alpha
    return Estimate(state_mean, mode_marginal, int(np.argmax(mode_marginal)))
