"""Q-learning variants with robust averaging, benchmarks, and analysis tools."""

from .agents import (
    AgentState,
    agent_step,
    averaged_step,
    double_step,
    make_agent,
    maxmin_step,
    policy_values,
    robust_target,
    twora_linearized_step,
    twora_step,
    watkins_step,
)
from .mdp import (
    CanonicalFeatureMap,
    FeatureMap,
    Policy,
    TabularMDP,
    Transition,
    build_tabular_mdp,
    canonical_features,
    greedy_policy,
    load_mdp,
    sample_step,
    save_mdp,
    solve_optimal_q,
    stationary_distribution,
    uniform_policy,
)
from .rng import stream
from .schedules import LearningRateSchedule, RhoSchedule, lr_at, rho_at
from .simulate import AgentSpec, TrainResult, run_tabular, run_tabular_batch, seed_streams

__all__ = [
    "AgentSpec",
    "AgentState",
    "CanonicalFeatureMap",
    "FeatureMap",
    "LearningRateSchedule",
    "Policy",
    "RhoSchedule",
    "TabularMDP",
    "TrainResult",
    "Transition",
    "agent_step",
    "averaged_step",
    "build_tabular_mdp",
    "canonical_features",
    "double_step",
    "greedy_policy",
    "load_mdp",
    "lr_at",
    "make_agent",
    "maxmin_step",
    "policy_values",
    "rho_at",
    "robust_target",
    "run_tabular",
    "run_tabular_batch",
    "sample_step",
    "save_mdp",
    "seed_streams",
    "solve_optimal_q",
    "stationary_distribution",
    "stream",
    "twora_linearized_step",
    "twora_step",
    "uniform_policy",
    "watkins_step",
]
