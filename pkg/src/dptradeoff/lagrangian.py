"""Unconstrained relaxation: minimize delay + mu * power by policy iteration.

Powers are rescaled so the largest cost is 1 before any of this runs, so
``mu`` is expressed in slots per normalized power unit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import InfeasibleAction, IterationLimitExceeded, NonStrictlyConvexPower
from .model import Policy, SystemModel, feasibility_mask, feasible_actions
from .steady_state import TradeoffPoint


def q_factor(model: SystemModel, h, mu: float, q: int, s: int) -> float:
    """Relative cost of sending ``s`` in state ``q`` given bias ``h``."""
    if s not in feasible_actions(model, q):
        raise InfeasibleAction(f"action {s} is not feasible in state {q}")
    h = np.asarray(h, dtype=float)
    alpha = model.alpha
    nxt = q - s + np.arange(len(alpha))
    return float(q + mu * model.P[s] + alpha @ (h[nxt] - h[: len(alpha)]))


def _q_table(model: SystemModel, h: np.ndarray, mu: float, mask: np.ndarray) -> np.ndarray:
    n, m = mask.shape
    alpha = model.alpha
    # expected h after sending s from q, for every (q, s) with q - s + A <= Q
    post = np.full((n, m), np.inf)
    ref = alpha @ h[: len(alpha)]
    for s in range(m):
        rows = np.flatnonzero(mask[:, s])
        if rows.size:
            nxt = rows[:, None] - s + np.arange(len(alpha))[None, :]
            post[rows, s] = h[nxt] @ alpha - ref
    return np.arange(n)[:, None] + mu * model.P[None, :] + post


@dataclass
class IterationTrace:
    """Bias vectors and policies produced along one run."""

    biases: List[np.ndarray] = field(default_factory=list)
    actions: List[np.ndarray] = field(default_factory=list)


def evaluate_bias(model: SystemModel, actions: np.ndarray, mu: float) -> np.ndarray:
    """Fixed point of ``h(q) = q + mu*P_s + sum_a alpha_a [h(q - s + a) - h(a)]`` for one policy.

    The solution has ``h(0) = 0``; ``sum_a alpha_a h(a)`` is the average cost.
    """
    n = model.Q + 1
    alpha = model.alpha
    M = np.eye(n)
    states = np.arange(n)
    for a, pa in enumerate(alpha):
        np.add.at(M, (states, states - actions + a), -pa)
    M[:, : len(alpha)] += alpha[None, :]
    cost = states + mu * model.P[actions]
    try:
        return np.linalg.solve(M, cost)
    except np.linalg.LinAlgError:
        # multichain policy: any bias solving the equations in least squares will do
        return np.linalg.lstsq(M, cost, rcond=None)[0]


def _greedy(table: np.ndarray) -> np.ndarray:
    # smallest s among minimizers, with float noise treated as a tie
    best = table.min(axis=1, keepdims=True)
    return np.argmax(table <= best + 1e-12 * np.maximum(1.0, np.abs(best)), axis=1)


def is_gain_optimal(model: SystemModel, actions: np.ndarray, mu_q: float) -> bool:
    """True if ``actions`` is greedy with respect to its own exact bias."""
    mask = feasibility_mask(model)
    h = evaluate_bias(model, actions, mu_q)
    table = _q_table(model, h, mu_q, mask)
    chosen = table[np.arange(len(actions)), actions]
    return bool(np.all(chosen <= table.min(axis=1) + 1e-9 * np.maximum(1.0, np.abs(chosen))))


def policy_iteration(
    model: SystemModel,
    mu: float,
    trace: Optional[IterationTrace] = None,
    max_iter: Optional[int] = None,
) -> Policy:
    """Deterministic optimal policy of ``min delay + mu * power``.

    Starts from the strictly convex bias ``h(q) = q**2`` and alternates greedy
    improvement (ties go to the smaller action) with the one-pass update
    ``h(q) <- Q(q, s(q))``.  A repeated policy is accepted once it is greedy
    with respect to its own exact bias; otherwise the updates continue.
    """
    if mu < 0:
        raise ValueError(f"mu must be nonnegative, got {mu}")
    if not model.power.strictly_convex:
        raise NonStrictlyConvexPower("policy iteration needs strictly convex power costs")
    norm = model.normalized()
    mask = feasibility_mask(norm)
    n = norm.Q + 1
    # the q-factor charges the backlog q per slot, i.e. E_a * delay
    mu_q = mu * norm.mean_arrival
    limit = max_iter if max_iter is not None else 10 * n * (norm.S + 1)
    h = np.arange(n, dtype=float) ** 2
    prev = None
    for _ in range(limit):
        table = _q_table(norm, h, mu_q, mask)
        actions = _greedy(table)
        h = table[np.arange(n), actions]
        if trace is not None:
            trace.biases.append(h.copy())
            trace.actions.append(actions.copy())
        if prev is not None and np.array_equal(actions, prev) and is_gain_optimal(norm, actions, mu_q):
            return Policy.deterministic(actions, norm.S)
        prev = actions
    raise IterationLimitExceeded(f"no convergence within {limit} iterations")


def weighted_cost(point: TradeoffPoint, mu: float) -> float:
    return point.delay + mu * point.power


def vertex_support_check(curve, mu: float) -> int:
    """Index of the curve vertex minimizing delay + mu * power (normalized power units)."""
    scale = curve.model.power_scale
    costs = [v.delay + mu * v.power / scale for v in curve.vertices]
    return int(np.argmin(costs))
