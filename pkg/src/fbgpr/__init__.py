"""Fully Bayesian Gaussian process regression.

Hyperparameters live in log space. Inference is available as a type-II
maximum likelihood point estimate, No-U-Turn HMC, or Gaussian variational
inference (mean-field or full-rank); predictions from any of them are
equal-weight Gaussian mixtures over hyperparameter draws.
"""

from .diagnostics import effective_sample_size, hpd_interval, rhat, summarize_trace
from .gp import log_marginal_likelihood, ml2_optimize, predictive_posterior
from .harness import compare_schemes, emit_plot_data, load_config, load_csv, run_experiment, split
from .kernels import (
    KernelExpr,
    ThetaVector,
    eval_cross_matrix,
    eval_kernel_matrix,
    grad_kernel_matrix,
    parse_kernel_expr,
)
from .model import LogJointTarget, PriorSpec, parse_prior
from .nuts import NutsConfig, Trace, sample_nuts, select_prediction_chain
from .predictive import PredictiveMixture, build_mixture, empirical_quantiles, mixture_moments, nlpd, rmse
from .vi import FullRankParams, MeanFieldParams, ViConfig, fit_vi

__version__ = "0.1.0"
