"""Dynamic constraint-based influence models for networked Markov chains."""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    DCIMError,
    ModelValidationError,
    PreconditionError,
    SearchSpaceError,
)
from .model import (
    LOAD_STATES,
    InfluenceModel,
    StateSpace,
    ValidationReport,
    activation_counts,
    build_constraint_matrix,
    build_effective_influence,
    build_total_influence,
    internal_mc_index,
    one_hot,
    select_internal_mc,
    validate_model,
)
from .rules import BUILTIN, CATALOG, ConstraintRule, get_policy, load_policy_file, parse_catalog
from .simulation import (
    Trajectory,
    expected_state,
    marginal_from_constraints,
    node_marginals,
    run_trajectory,
    sample_next,
    step_marginal,
    step_sample,
)
from .policy import (
    best_policy,
    constraint_expectancy,
    optimize_bruteforce,
    optimize_greedy,
    stepwise_expectancy,
)
from .steady_state import (
    JSRBounds,
    MatrixFamily,
    Verdict,
    empirical_convergence,
    enumerate_family,
    estimate_jsr,
    limit_exists,
    rcp_conditions,
)
from .experiments import (
    BestPolicy,
    ExpectancyReport,
    FixedPolicy,
    Optimum,
    TopologySpec,
    compare_policies,
    compare_with_optimum,
    generate_topology,
    load_balancing_model,
    overall_expectancy,
    run_ensemble,
    topology_sweep,
)
from .io import load_fixture, load_model, model_to_json, parse_model, save_model

__all__ = [name for name in dir() if not name.startswith("_")]
