"""Numerical experiments on minimal submanifolds of metric families ``beta dt^2 + g_t``."""

from .errors import *  # noqa: F401,F403
from .functions import Func1D, make_function
from .metric_core import (MetricFamily, MonotonicityReport, classify_monotonicity, conformal_family, eval_metric,
                          lie_derivative_t, metric_from_spec, model_metric, product_extension, reparametrize_t)
from .geometry import (christoffel, exp_map, geodesic_distance, geodesic_distances, geodesic_shoot,
                       largest_monotone_radius, normal_growth_probe)
from .submanifold import (DiscreteImmersion, closed_curve, conformal_mc_check, discrete_laplace_beltrami,
                          eta_and_divY, grid_patch, laplacian_tau, mean_curvature, open_curve, tan_theta_probe,
                          tau_theta, volume)
from .graph_pde import (Grid, GraphField, NewtonOptions, SolverReport, closed_form_residual, dirichlet_solve,
                        graph_mean_curvature, graph_normal, newton_solve, specialization_crosscheck)
from .flow_lab import (FlowPolicy, FlowTrace, ball_threshold_experiment, flow_step, max_principle_probe,
                       polish_minimal, run_flow)

__version__ = "0.1.0"
