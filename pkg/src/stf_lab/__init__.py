"""Desk-scale score-matching laboratory.

Noise schedules and Gaussian transition kernels, synthetic data with exact
scores, per-sample and self-normalized batch training targets, Monte-Carlo
variance/divergence diagnostics, a small numpy score network with built-in
backprop, and reverse-time ODE/SDE samplers -- everything testable against
closed-form oracles.
"""

from .kernels import NoiseSchedule, TimeSampler, ve, vp, edm, sample_time
from .datasets import (
    EmpiricalSet,
    GaussianMixture,
    load_points,
    make_ring,
    make_two_gaussians,
    sample_data,
    save_points,
)
from .analytic import (
    brute_force_stf_minimizer,
    log_marginal_density,
    marginal_score,
    posterior_weights,
    sample_posterior,
    v_dsm_closed_two_gaussians,
)
from .targets import TargetBatch, dsm_target, make_training_batch, stf_target, stf_weights
from .variance import (
    VarianceReport,
    estimate_bias_curve,
    estimate_divergence,
    estimate_v_dsm,
    estimate_v_stf,
    f_div_scalar,
    phase_scan,
)
from .model import Adam, ScoreNet, TrainConfig, TrainLog, loss_and_grad, score_mse_vs_analytic, train
from .samplers import (
    AnalyticScore,
    NetScore,
    edm_sigma_grid,
    ode_drift,
    sample_euler,
    sample_euler_maruyama,
    sample_heun,
    sample_pc,
    sample_rk45,
)
from .metrics import energy_distance, moment_diagnostics
from .cli import main as cli_main
from . import analytic, datasets, kernels, metrics, model, samplers, targets, variance

__version__ = "0.1.0"
