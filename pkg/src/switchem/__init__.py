"""Joint state estimation and online parameter identification for
regime-switching (jump Markov) nonlinear state-space models."""

from .model import (FeasibilityConfig, GaussianModeParams, GaussianModel,
                    InitialCondition, ModelSpec, StatLayout, SuffStats, Theta,
                    gaussian_maximizer, gaussian_suffstat, load_theta, log_joint,
                    mstep, save_theta)
from .online_em import (ALGORITHMS, EmConfig, EstimatorState, StepRecord,
                        StepSchedule, em_step, record_columns, run)
from .rbpf import (BootstrapProposal, DegenerateParticleError, Estimate,
                   FilterCollapseError, ParticleSystem, Proposal, ess, estimate,
                   gamma_table, init_system, predict_mode_probs, rbpf_step,
                   systematic_resample, update_mode_probs, weight_update)
from .simulate import (Scenario, Trajectory, benchmark_model,
                       cv_positioning_model, get_scenario, jmls_failure_model,
                       simulate)
from .smoothing import aggregate, fs_update, path_update, stack_stat

__version__ = "0.1.0"
