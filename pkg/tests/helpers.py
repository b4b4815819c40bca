"""Shared toy models for the test suite."""

import numpy as np

from switchem.model import GaussianModeParams, GaussianModel, Theta


class PureHmmModel(GaussianModel):
    """Model whose densities ignore the continuous state entirely.

    The state is driven by mode-independent standard-normal noise and the
    measurement is pure mode-dependent Gaussian noise, so the per-particle
    mode recursion coincides with an exact discrete filter on the
    observations alone.
    """

    def __init__(self, num_modes=2):
        fixed = tuple(GaussianModeParams(0.0, 1.0, 0.0, 1.0) for _ in range(num_modes))
        super().__init__(num_modes=num_modes, state_dim=1, meas_dim=1,
                         fixed_params=fixed, estimate_process=False,
                         estimate_measurement=True, uniform_dynamics=True,
                         uniform_meas_map=True)

    def drift(self, k, x, t):
        return np.zeros_like(x)

    def meas(self, k, x, t):
        return np.zeros_like(x[..., 0:1])


def pure_hmm_theta(means, variances, tpm):
    params = tuple(GaussianModeParams(0.0, 1.0, m, v) for m, v in zip(means, variances))
    return Theta(params, np.asarray(tpm, dtype=float))


class ShiftDriftModel(GaussianModel):
    """Mode-dependent dynamics and direct state observation.

    Mode k pulls the state toward level 3k with its own process noise; both
    noise channels are estimated.  Exercises the generic (non-shared-
    dynamics) code paths.
    """

    def __init__(self, num_modes=2):
        fixed = tuple(GaussianModeParams(0.0, 1.0, 0.0, 1.0) for _ in range(num_modes))
        super().__init__(num_modes=num_modes, state_dim=1, meas_dim=1,
                         fixed_params=fixed, estimate_process=True,
                         estimate_measurement=True)

    def drift(self, k, x, t):
        return 0.5 * x + 3.0 * k

    def meas(self, k, x, t):
        return x


def shift_drift_theta(num_modes=2, tpm=None):
    if tpm is None:
        tpm = np.full((num_modes, num_modes), 1.0 / num_modes)
    params = tuple(GaussianModeParams(0.0, 1.0 + 0.5 * k, 0.1 * k, 0.8 + 0.2 * k)
                   for k in range(num_modes))
    return Theta(params, np.asarray(tpm, dtype=float))
