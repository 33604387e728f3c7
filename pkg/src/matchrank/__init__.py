"""Social-welfare ranking for two-sided matching markets."""

from .market import (
    ExaminationModel,
    Market,
    SyntheticSpec,
    exam_vector,
    generate_synthetic,
    load_market,
    proposition5_instance,
    save_market,
    theorem2_instance,
)
from .objective import (
    apply_probabilities,
    candidate_utilities,
    employer_utilities,
    lower_bound_gradient,
    social_welfare_exact,
    social_welfare_lower_bound,
)
from .optimize import OptimizerConfig, frank_wolfe, projected_gradient, two_stage_rerank
from .policy import Policy, bvn_decompose, load_policy, naive_policy, reciprocal_policy, save_policy
from .simulate import SimulationConfig, mc_vs_exact_check, simulate_market

__version__ = "0.1.0"
