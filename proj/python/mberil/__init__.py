"""Entropy-regularized imitation learning with an exact tabular oracle.

The heavy lifting lives in the C++ extension; this package re-exports it.
"""

from mberil._core import (  # noqa: F401
    ExpertWorld,
    RegularizationConfig,
    Schedule,
    SolveResult,
    TabularMdp,
    TransitionBuffer,
    ValueTable,
    evaluate_policy_table,
    induced_model,
    induced_policy,
    inner_objective,
    log_density_ratios,
    make_expert,
    make_expert_world,
    nll_model,
    nll_policy,
    normalized_return,
    run_experiment_config,
    sample_expert,
    selfcheck,
    solve,
    solve_canonical,
    train,
    variants,
)

__all__ = [
    "ExpertWorld",
    "RegularizationConfig",
    "Schedule",
    "SolveResult",
    "TabularMdp",
    "TransitionBuffer",
    "ValueTable",
    "evaluate_policy_table",
    "induced_model",
    "induced_policy",
    "inner_objective",
    "log_density_ratios",
    "make_expert",
    "make_expert_world",
    "nll_model",
    "nll_policy",
    "normalized_return",
    "run_experiment_config",
    "sample_expert",
    "selfcheck",
    "solve",
    "solve_canonical",
    "train",
    "variants",
]
