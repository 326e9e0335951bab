"""Reverse-time SDE samplers with empirical Wasserstein convergence measurement.

Simulates the reverse processes of diffusion generative models with exact
Gaussian-mixture scores (optionally perturbed in controlled ways), using
Euler-Maruyama or a strong order-3/2 stochastic Runge-Kutta scheme, and
measures moment-matched 2-Wasserstein convergence against exact references
across step size, terminal time, and score accuracy.
"""

from .errors import RevsdeError
from .harness import (
    ConvergenceReport,
    SweepConfig,
    param_choice,
    run_eps_sweep,
    run_h_sweep,
    run_T_sweep,
)
from .metrics import (
    MomentMode,
    MomentSummary,
    SlopeFit,
    accumulate_moments,
    fit_log_slope,
    gaussian_w2,
    sym_psd_sqrt,
)
from .samplers import (
    BrownianDraw,
    InitKind,
    SampleBatch,
    SamplerKind,
    TimeGrid,
    draw_increments,
    em_step,
    forward_marginal_sample,
    moment_oracle_gaussian,
    sample_reverse,
    srk_step,
)
from .schedules import (
    Schedule,
    ScheduleKind,
    make_generic_schedule,
    make_vp_schedule,
    marginal_params,
)
from .score import (
    GaussianMixture,
    Perturbation,
    ScoreModel,
    diagonal_covariance,
    fisher_information_estimate,
    full_covariance,
    metered_epsilon,
    mixture_log_density,
    mixture_score,
    single_gaussian,
)

__all__ = [
    "BrownianDraw",
    "ConvergenceReport",
    "GaussianMixture",
    "InitKind",
    "MomentMode",
    "MomentSummary",
    "Perturbation",
    "RevsdeError",
    "SampleBatch",
    "SamplerKind",
    "Schedule",
    "ScheduleKind",
    "ScoreModel",
    "SlopeFit",
    "SweepConfig",
    "TimeGrid",
    "accumulate_moments",
    "diagonal_covariance",
    "draw_increments",
    "em_step",
    "fisher_information_estimate",
    "fit_log_slope",
    "forward_marginal_sample",
    "full_covariance",
    "gaussian_w2",
    "make_generic_schedule",
    "make_vp_schedule",
    "marginal_params",
    "metered_epsilon",
    "mixture_log_density",
    "mixture_score",
    "moment_oracle_gaussian",
    "param_choice",
    "run_eps_sweep",
    "run_h_sweep",
    "run_T_sweep",
    "sample_reverse",
    "single_gaussian",
    "srk_step",
    "sym_psd_sqrt",
    "__version__",
]

__version__ = "0.1.0"
