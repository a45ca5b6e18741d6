"""Optimal delay-power tradeoff for a single-queue batch scheduler."""
from .model import ArrivalDistribution, Policy, PowerProfile, SystemModel, ThresholdSpec
from .steady_state import TradeoffPoint, evaluate_policy, stationary_distribution
from .vertex_walk import TradeoffCurve, policy_for_constraint, trace_curve
from .lagrangian import policy_iteration
from .lp_oracle import build_lp, lp_optimal_delay, solve_simplex

__all__ = [
    "ArrivalDistribution",
    "Policy",
    "PowerProfile",
    "SystemModel",
    "ThresholdSpec",
    "TradeoffPoint",
    "TradeoffCurve",
    "evaluate_policy",
    "stationary_distribution",
    "trace_curve",
    "policy_for_constraint",
    "policy_iteration",
    "build_lp",
    "solve_simplex",
    "lp_optimal_delay",
]
