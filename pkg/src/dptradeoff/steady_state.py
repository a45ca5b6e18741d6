"""Stationary analysis of the chain induced by a fixed policy.

Also holds the single-row perturbation machinery (mixing two policies that
differ in one state moves the (power, delay) point along a straight segment)
and the reduction of a multichain policy onto one of its closed classes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import FrozenSet, List, Union

import numba
import numpy as np
from scipy import linalg

from .errors import (
    NotAClosedClass,
    NotUnichain,
    PoliciesDifferInMultipleRows,
    ReductionImpossible,
    SingularSystem,
    ZeroPowerDifference,
)
from .model import (
    Policy,
    SystemModel,
    ThresholdSpec,
    build_transition_matrix,
    check_feasible,
    expand_threshold_policy,
    feasible_actions,
)

STRUCTURAL_ZERO = 1e-15
NEG_CLAMP = 1e-10


@dataclass(frozen=True)
class StationaryDistribution:
    pi: np.ndarray

    def __post_init__(self):
        self.pi.setflags(write=False)


@dataclass(frozen=True)
class ChainClassification:
    closed_classes: List[FrozenSet[int]]
    transient_states: FrozenSet[int]

    @property
    def is_unichain(self) -> bool:
        return len(self.closed_classes) == 1


@dataclass(frozen=True)
class TradeoffPoint:
    power: float
    delay: float
    policy: Union[Policy, ThresholdSpec, None] = None


def _adjacency(transition: np.ndarray) -> np.ndarray:
    # edge i -> j iff entry (j, i) is positive
    return (transition > STRUCTURAL_ZERO).T


@numba.njit(cache=True)
def _reach_sets(indptr, indices, n):
    """reach[i, j] is True iff j can be reached from i (in zero or more steps)."""
    reach = np.zeros((n, n), dtype=np.bool_)
    stack = np.empty(n, dtype=np.int64)
    for i in range(n):
        reach[i, i] = True
        stack[0] = i
        top = 1
        while top > 0:
            top -= 1
            u = stack[top]
            for k in range(indptr[u], indptr[u + 1]):
                v = indices[k]
                if not reach[i, v]:
                    reach[i, v] = True
                    stack[top] = v
                    top += 1
    return reach


def classify_chain(transition: np.ndarray) -> ChainClassification:
    """Closed communicating classes and transient states of a chain."""
    adj = _adjacency(transition)
    n = adj.shape[0]
    src, dst = np.nonzero(adj)
    indptr = np.searchsorted(src, np.arange(n + 1))
    reach = _reach_sets(indptr, dst.astype(np.int64), n)
    # a state is recurrent iff everything it reaches leads back to it
    recurrent = ~np.any(reach & ~reach.T, axis=1)
    closed, seen = [], np.zeros(n, dtype=bool)
    for i in np.flatnonzero(recurrent):
        if not seen[i]:
            seen |= reach[i]
            closed.append(frozenset(np.flatnonzero(reach[i]).tolist()))
    transient = frozenset(np.flatnonzero(~recurrent).tolist())
    return ChainClassification(closed, transient)


def _can_reach(adj: np.ndarray, targets) -> np.ndarray:
    """States with a path into ``targets`` (the targets included)."""
    reach = np.zeros(adj.shape[0], dtype=bool)
    reach[list(targets)] = True
    rev = adj.T
    frontier = list(targets)
    while frontier:
        j = frontier.pop()
        for i in np.flatnonzero(rev[j] & ~reach):
            reach[i] = True
            frontier.append(i)
    return reach


def reachable_from(transition: np.ndarray, start: int) -> np.ndarray:
    adj = _adjacency(transition)
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    stack = [start]
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(adj[i] & ~seen):
            seen[j] = True
            stack.append(j)
    return seen


def reduction_steps(model: SystemModel, policy: Policy, target_class) -> list:
    """Redirections ``(state, action)`` that leave ``target_class`` as the only closed class.

    Each step picks the lowest state that cannot yet reach the class but has a
    feasible action leading into the class or its basin; the cheapest such
    action is used.
    """
    target = frozenset(int(x) for x in target_class)
    lam = build_transition_matrix(model, policy)
    if target not in classify_chain(lam).closed_classes:
        raise NotAClosedClass(f"{sorted(target)} is not a closed class of this policy")
    alpha = model.alpha
    support = np.flatnonzero(alpha > 0)
    f = policy.f.copy()
    steps = []
    while True:
        basin = _can_reach(_adjacency(lam), target)
        if basin.all():
            return steps
        choice = None
        for c in np.flatnonzero(~basin):
            options = [s for s in feasible_actions(model, int(c)) if basin[c - s + support].any()]
            if options:
                choice = (int(c), min(options, key=lambda s: (model.P[s], s)))
                break
        if choice is None:
            raise ReductionImpossible(
                f"no state outside the basin of {sorted(target)} can be redirected into it"
            )
        c, s = choice
        f[c] = 0.0
        f[c, s] = 1.0
        steps.append(choice)
        lam = build_transition_matrix(model, Policy(f))


def reduce_to_unichain(model: SystemModel, policy: Policy, target_class) -> Policy:
    """Policy agreeing with ``policy`` on ``target_class`` whose only closed class it is."""
    f = policy.f.copy()
    for c, s in reduction_steps(model, policy, target_class):
        f[c] = 0.0
        f[c, s] = 1.0
    return Policy(f)


def _h_matrix(lam: np.ndarray) -> np.ndarray:
    n = lam.shape[0]
    H = np.empty((n, n))
    H[0] = 1.0
    H[1:] = (lam - np.eye(n))[: n - 1]
    return H


def _solve_pi(lam: np.ndarray) -> np.ndarray:
    H = _h_matrix(lam)
    c = np.zeros(lam.shape[0])
    c[0] = 1.0
    try:
        lu = linalg.lu_factor(H, check_finite=False)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(str(exc)) from None
    if np.any(np.diag(lu[0]) == 0.0):
        raise SingularSystem("stationary system is singular")
    return linalg.lu_solve(lu, c, check_finite=False)


def _clean(pi: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(pi)) or pi.min() < -NEG_CLAMP:
        raise SingularSystem(f"stationary solve produced invalid mass (min {pi.min()!r})")
    pi = np.where(pi < 0, 0.0, pi)
    return pi / pi.sum()


def stationary_distribution(model: SystemModel, policy: Policy) -> StationaryDistribution:
    """Steady-state law of a unichain policy, by LU solve of the normalized balance system."""
    lam = build_transition_matrix(model, policy)
    cls = classify_chain(lam)
    if not cls.is_unichain:
        raise NotUnichain(f"policy has {len(cls.closed_classes)} closed classes")
    if not cls.transient_states:
        return StationaryDistribution(_clean(_solve_pi(lam)))
    # transient mass is structurally zero, and slowly leaking transient states
    # make the full system ill-conditioned, so solve on the closed class alone
    idx = np.array(sorted(cls.closed_classes[0]))
    pi = np.zeros(model.Q + 1)
    pi[idx] = _solve_pi(lam[np.ix_(idx, idx)])
    return StationaryDistribution(_clean(pi))


def average_power(model: SystemModel, policy: Policy, pi) -> float:
    pi = pi.pi if isinstance(pi, StationaryDistribution) else np.asarray(pi)
    return float(pi @ (policy.f @ model.P))


def average_delay(model: SystemModel, pi) -> float:
    pi = pi.pi if isinstance(pi, StationaryDistribution) else np.asarray(pi)
    return float(np.arange(len(pi)) @ pi) / model.mean_arrival


def evaluate_policy(model: SystemModel, policy: Policy) -> TradeoffPoint:
    """(average power, average delay) of a unichain policy."""
    pi = stationary_distribution(model, policy)
    return TradeoffPoint(average_power(model, policy, pi), average_delay(model, pi), policy)


def class_reached_from_empty(model: SystemModel, policy: Policy) -> FrozenSet[int]:
    """The closed class entered from state 0 (the lowest-indexed one if several are)."""
    lam = build_transition_matrix(model, policy)
    seen = reachable_from(lam, 0)
    for cls in classify_chain(lam).closed_classes:
        if seen[min(cls)]:
            return cls
    raise AssertionError("every finite chain has a closed class")  # pragma: no cover


def restricted_distribution(model: SystemModel, policy: Policy, closed_class) -> np.ndarray:
    """Stationary law of the chain restricted to one closed class, padded with zeros."""
    idx = np.array(sorted(closed_class))
    lam = build_transition_matrix(model, policy)
    sub = lam[np.ix_(idx, idx)]
    pi = np.zeros(model.Q + 1)
    pi[idx] = _clean(_solve_pi(sub))
    return pi


def evaluate_from_empty(model: SystemModel, policy: Policy) -> TradeoffPoint:
    """Like :func:`evaluate_policy` but accepts multichain policies.

    A multichain policy is scored by the closed class it enters from the empty
    queue, via :func:`reduce_to_unichain` onto that class.
    """
    lam = build_transition_matrix(model, policy)
    if classify_chain(lam).is_unichain:
        return evaluate_policy(model, policy)
    target = class_reached_from_empty(model, policy)
    try:
        reduced = reduce_to_unichain(model, policy, target)
        pt = evaluate_policy(model, reduced)
        return TradeoffPoint(pt.power, pt.delay, policy)
    except ReductionImpossible:
        pi = restricted_distribution(model, policy, target)
        return TradeoffPoint(average_power(model, policy, pi), average_delay(model, pi), policy)


def mix_policies(policy_a: Policy, policy_b: Policy, epsilon: float) -> Policy:
    """Entrywise ``(1 - epsilon) * a + epsilon * b``."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon {epsilon} outside [0, 1]")
    if epsilon == 0.0:
        return policy_a
    if epsilon == 1.0:
        return policy_b
    return Policy((1.0 - epsilon) * policy_a.f + epsilon * policy_b.f)


def _single_row(policy_a: Policy, policy_b: Policy) -> int:
    rows = policy_a.differing_rows(policy_b)
    if len(rows) != 1:
        raise PoliciesDifferInMultipleRows(f"policies differ in rows {rows.tolist()}")
    return int(rows[0])


@dataclass(frozen=True)
class _RowPerturbation:
    """Quantities describing a one-row change ``a -> b`` around base policy ``a``."""

    q: int
    lu: tuple
    h_q: np.ndarray      # row q of H_a^{-1}
    delta: np.ndarray    # column q of H_b - H_a
    zeta: float          # p_b[q] - p_a[q]
    p: np.ndarray        # per-state expected power under a

    @property
    def h_delta(self) -> float:
        return float(self.h_q @ self.delta)

    def inv_times(self, v: np.ndarray) -> np.ndarray:
        return linalg.lu_solve(self.lu, v, check_finite=False)


def _perturbation(model: SystemModel, policy_a: Policy, policy_b: Policy) -> _RowPerturbation:
    check_feasible(model, policy_a)
    check_feasible(model, policy_b)
    q = _single_row(policy_a, policy_b)
    lam_a = build_transition_matrix(model, policy_a)
    if not classify_chain(lam_a).is_unichain:
        raise NotUnichain("base policy must be unichain")
    H_a = _h_matrix(lam_a)
    H_b = _h_matrix(build_transition_matrix(model, policy_b))
    lu = linalg.lu_factor(H_a, check_finite=False)
    e_q = np.zeros(model.Q + 1)
    e_q[q] = 1.0
    h_q = linalg.lu_solve(lu, e_q, trans=1, check_finite=False)
    p_a = policy_a.f @ model.P
    p_b = policy_b.f @ model.P
    return _RowPerturbation(q, lu, h_q, (H_b - H_a)[:, q], float(p_b[q] - p_a[q]), p_a)


def epsilon_prime(model: SystemModel, policy_a: Policy, policy_b: Policy, epsilon: float) -> float:
    """Fraction of the way from point(a) to point(b) reached by the epsilon-mix."""
    k = _perturbation(model, policy_a, policy_b).h_delta
    return (epsilon + epsilon * k) / (1.0 + epsilon * k)


def mix_weight_for_fraction(model: SystemModel, policy_a: Policy, policy_b: Policy, fraction: float) -> float:
    """Inverse of :func:`epsilon_prime`: the mixing weight landing ``fraction`` along the segment."""
    k = _perturbation(model, policy_a, policy_b).h_delta
    return fraction / (1.0 + k - fraction * k)


def segment_slope(model: SystemModel, policy_a: Policy, policy_b: Policy) -> float:
    """Slope dD/dP of the segment joining the points of two one-row-apart policies."""
    try:
        pert = _perturbation(model, policy_a, policy_b)
    except NotUnichain:
        pert = _perturbation(model, policy_b, policy_a)
    # h_q[0] is the stationary mass of the changed state under the base policy
    if pert.h_q[0] <= NEG_CLAMP:
        raise ZeroPowerDifference(f"state {pert.q} carries no stationary mass; the points coincide")
    hd = pert.inv_times(pert.delta)
    d = np.arange(model.Q + 1, dtype=float)
    denom = model.mean_arrival * (pert.p @ hd - pert.zeta)
    num = d @ hd
    if abs(denom) <= 1e-15 * max(1.0, abs(num)):
        raise ZeroPowerDifference("the two policies have the same average power")
    return float(num / denom)


@dataclass(frozen=True)
class FactoredPolicy:
    """A unichain policy with its balance system factorized, for scoring one-row changes."""

    policy: Policy
    lu: tuple
    pi: np.ndarray
    p: np.ndarray


def factor_policy(model: SystemModel, policy: Policy) -> FactoredPolicy:
    lam = build_transition_matrix(model, policy)
    cls = classify_chain(lam)
    if not cls.is_unichain:
        raise NotUnichain(f"policy has {len(cls.closed_classes)} closed classes")
    try:
        lu = linalg.lu_factor(_h_matrix(lam), check_finite=False)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(str(exc)) from None
    c = np.zeros(model.Q + 1)
    c[0] = 1.0
    pi = linalg.lu_solve(lu, c, check_finite=False)
    pi[list(cls.transient_states)] = 0.0
    return FactoredPolicy(policy, lu, _clean(pi), policy.f @ model.P)


def _next_state_law(model: SystemModel, q: int, row: np.ndarray) -> np.ndarray:
    out = np.zeros(model.Q + 1)
    for s in np.flatnonzero(row):
        out[q - s: q - s + len(model.alpha)] += row[s] * model.alpha
    return out


def row_change_offset(model: SystemModel, base: FactoredPolicy, q: int, new_row) -> tuple:
    """Exact ``(dP, dD)`` from replacing row ``q`` of the base policy by ``new_row``.

    Uses the rank-one update of the balance system, so the offsets keep full
    relative precision even when they are many orders of magnitude below the
    point coordinates.  Raises :class:`SingularSystem` when the changed policy
    is no longer unichain.
    """
    new_row = np.asarray(new_row, dtype=float)
    diff = _next_state_law(model, q, new_row) - _next_state_law(model, q, base.policy.f[q])
    delta = np.zeros(model.Q + 1)
    delta[1:] = diff[:-1]
    w = linalg.lu_solve(base.lu, delta, check_finite=False)
    denom = 1.0 + w[q]
    if abs(denom) <= 1e-12:
        raise SingularSystem("changed policy is not unichain")
    mass = base.pi[q]
    if mass == 0.0:
        return 0.0, 0.0
    dpi = -w * (mass / denom)
    zeta = float(new_row @ model.P) - base.p[q]
    d_power = float(base.p @ dpi + zeta * mass / denom)
    d_delay = float(np.arange(model.Q + 1) @ dpi) / model.mean_arrival
    return d_power, d_delay


def evaluate_spec(model: SystemModel, spec: ThresholdSpec) -> TradeoffPoint:
    point = evaluate_from_empty(model, expand_threshold_policy(model, spec))
    return TradeoffPoint(point.power, point.delay, spec)
