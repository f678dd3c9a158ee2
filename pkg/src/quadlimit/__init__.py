"""Sparse Bernoulli quadratic forms on graphs.

Simulate T = sum over edges of X_u X_v under vanishing activation
probabilities, estimate the step kernel and degree profile a graph sequence
induces, evaluate and sample the three part limiting law, and sweep the
convergence conditions that decide which limit (if any) a family has.
"""

from .errors import (BlockCountExceededError, InstanceTooLargeError, ParseError,
                     QuadlimitError, RuntimeLimitError, SimulationOverflowError,
                     ValidationError)
from .graphs import (GRAPH_KINDS, Graph, GraphFamily, build, count_subgraph,
                     degree_decay_diagnostic, induced_truncation,
                     neighbor_degree_sums, read_edge_list, three_star_count,
                     truncation_kept, write_edge_list)
from .stepfunc import (CutNormResult, StepFunction1D, StepGraphon,
                       block_approximation, cut_metric_upper_bound,
                       cut_norm_window, degree_function,
                       empirical_degree_function, empirical_graphon,
                       empirical_graphon_window, empirical_tail_mass,
                       l1_distance_1d, l1_distance_truncated,
                       l1_graphon_window, merge_breakpoints, restrict_window,
                       tail_mass)
from .quadform import (DecomposeResult, Pmf, SimConfig, SparseLaw, decompose,
                       decompose_samples, exact_pmf, general_law_mismatch,
                       moment, poisson_theta_for_p1, simulate,
                       simulate_samples, truncated_mean_var)
from .limits import (LIMIT_PMF_MAX_BLOCKS, PRESET_IDS, LimitSpec,
                     PoissonBlockIntegrand, ito_block_integral,
                     ito_expected_value, limit_pmf, mgf, mgf_total,
                     phi_integrand, preset, sample_limit,
                     univariate_expected_value, univariate_ito_integral)
from .lab import (EXAMPLE_IDS, CellResult, ExperimentReport, ScalingRule,
                  TvDistance, check_conditions, default_rule,
                  escaped_mass_target, reproduce, second_moment_check,
                  tv_distance)
from .cli import Command, main, parse_command, parse_family, parse_law, run

__version__ = "0.1.0"
