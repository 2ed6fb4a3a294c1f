"""Multilevel model-and-variance-reduction Monte Carlo with HDG full-order models and certified RB surrogates."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .hdg import (AffineSystem, BoundaryCondition, DiscreteSpaces, FieldSolution, Mesh1D, NonsolvableParameter,
                  assemble_affine, assemble_direct, evaluate_output, lift, outputs_batch, solve_full)
from .montecarlo import (A_95, A_999, Estimate, clt_halfwidth, mc_estimates, mc_mean_var, mc_rb_expectation_bound,
                         mc_rb_total_bound, mc_rb_variance_bound, optimal_cv_gamma)
from .mvr import (LevelData, LevelPlan, LevelSpec, MVREstimate, TestSetCache, adaptive_run, compare_level_counts,
                  equivalent_cost, multilevel_expectation, multilevel_variance, optimal_weights, select_levels)
from .rb import OutputBound, RBModel, Stability, greedy_build, load_model, min_theta_stability, save_model
from .stochastic import (ParameterDomain, RandomFieldExpansion, SampleStream, analytic_moments_1d,
                         analytic_output_1d, analytic_solution_1d, draw_samples, piecewise_constant_expansion)

__version__ = "0.1.0"
