"""Queue model: arrivals, power costs, policies and the induced Markov chain.

A slot runs as: observe the backlog ``q``, transmit ``s`` packets at cost
``P_s``, then ``a`` packets arrive.  The next backlog is ``q - s + a``; an
action is feasible only if ``0 <= q - s <= Q - A`` so the buffer can neither
underflow nor overflow.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    BufferTooSmall,
    InfeasiblePolicy,
    InfeasibleThresholds,
    MalformedSpec,
    NonConvexPower,
    ProbabilityNotNormalized,
    RateCapBelowArrivalMax,
    StateOutOfRange,
    ZeroArrivalRate,
)

PROB_TOL = 1e-12


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ArrivalDistribution:
    """Per-slot batch-size distribution ``alpha_0..alpha_A``.

    Trailing zero probabilities are trimmed so ``A`` is the true maximum.
    """

    probs: tuple

    def __post_init__(self):
        p = [float(x) for x in self.probs]
        if not p or any(not np.isfinite(x) for x in p):
            raise ProbabilityNotNormalized("arrival probabilities must be finite and nonempty")
        if any(x < 0 for x in p):
            raise ProbabilityNotNormalized(f"negative arrival probability in {p}")
        if abs(sum(p) - 1.0) > PROB_TOL:
            raise ProbabilityNotNormalized(f"arrival probabilities sum to {sum(p)!r}, not 1")
        while len(p) > 1 and p[-1] == 0.0:
            p.pop()
        object.__setattr__(self, "probs", tuple(p))
        object.__setattr__(self, "_array", _frozen_array(p))
        if self.mean <= 0:
            raise ZeroArrivalRate("mean arrival rate must be positive")

    @property
    def A(self) -> int:
        return len(self.probs) - 1

    @property
    def array(self) -> np.ndarray:
        return self._array

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(len(self.probs)), self.probs))


@dataclass(frozen=True)
class PowerProfile:
    """Energy cost ``P_s`` of transmitting ``s`` packets in one slot."""

    costs: tuple

    def __post_init__(self):
        c = tuple(float(x) for x in self.costs)
        if len(c) < 2:
            raise NonConvexPower("power profile needs at least P_0 and P_1")
        if any(not np.isfinite(x) for x in c):
            raise NonConvexPower("power costs must be finite")
        if c[0] != 0.0:
            raise NonConvexPower(f"P_0 must be 0, got {c[0]!r}")
        inc = np.diff(c)
        if np.any(inc < 0):
            raise NonConvexPower(f"power profile is decreasing somewhere: {c}")
        if np.any(np.diff(inc) < 0):
            raise NonConvexPower(f"power increments {tuple(inc)} are not nondecreasing")
        object.__setattr__(self, "costs", c)
        object.__setattr__(self, "_array", _frozen_array(c))

    @property
    def S(self) -> int:
        return len(self.costs) - 1

    @property
    def array(self) -> np.ndarray:
        return self._array

    @property
    def strictly_convex(self) -> bool:
        inc = np.diff(self.costs)
        return bool(np.all(np.diff(inc) > 0))

    def scaled(self, factor: float) -> "PowerProfile":
        return PowerProfile(tuple(x * factor for x in self.costs))


@dataclass(frozen=True)
class SystemModel:
    """One CMDP instance: buffer size, arrival law and power profile."""

    Q: int
    arrivals: ArrivalDistribution
    power: PowerProfile

    def __post_init__(self):
        validate_model(self)

    @classmethod
    def from_lists(cls, Q: int, arrival: Sequence[float], power: Sequence[float]) -> "SystemModel":
        return cls(int(Q), ArrivalDistribution(tuple(arrival)), PowerProfile(tuple(power)))

    @property
    def A(self) -> int:
        return self.arrivals.A

    @property
    def S(self) -> int:
        return self.power.S

    @property
    def alpha(self) -> np.ndarray:
        return self.arrivals.array

    @property
    def P(self) -> np.ndarray:
        return self.power.array

    @property
    def mean_arrival(self) -> float:
        return self.arrivals.mean

    @property
    def power_scale(self) -> float:
        """Largest power cost; the factor used to normalize powers to [0, 1]."""
        top = self.power.costs[-1]
        return top if top > 0 else 1.0

    def normalized(self) -> "SystemModel":
        """Same model with powers divided by :attr:`power_scale`."""
        scale = self.power_scale
        if scale == 1.0:
            return self
        return SystemModel(self.Q, self.arrivals, self.power.scaled(1.0 / scale))


def validate_model(model: SystemModel) -> SystemModel:
    """Check every standing assumption of the queue model and return it."""
    if not isinstance(model.Q, (int, np.integer)) or model.Q < 0:
        raise BufferTooSmall(f"Q must be a nonnegative integer, got {model.Q!r}")
    if not isinstance(model.arrivals, ArrivalDistribution):
        raise ProbabilityNotNormalized("arrivals must be an ArrivalDistribution")
    if not isinstance(model.power, PowerProfile):
        raise NonConvexPower("power must be a PowerProfile")
    # the component types validated themselves on construction
    if model.S < model.A:
        raise RateCapBelowArrivalMax(f"S={model.S} is below the maximum batch A={model.A}")
    if model.Q < model.A:
        raise BufferTooSmall(f"Q={model.Q} is below the maximum batch A={model.A}")
    return model


def feasible_actions(model: SystemModel, q: int) -> range:
    """Transmission counts allowed in state ``q``."""
    if not 0 <= q <= model.Q:
        raise StateOutOfRange(f"state {q} outside 0..{model.Q}")
    return range(max(0, q - (model.Q - model.A)), min(model.S, q) + 1)


def feasibility_mask(model: SystemModel) -> np.ndarray:
    """Boolean (Q+1, S+1) array, True where ``f_{q,s}`` may be positive."""
    q = np.arange(model.Q + 1)[:, None]
    s = np.arange(model.S + 1)[None, :]
    return (q - s >= 0) & (q - s <= model.Q - model.A)


@dataclass(frozen=True, eq=False)
class Policy:
    """Stationary randomized policy: row ``q`` is the action law in state ``q``."""

    f: np.ndarray

    def __post_init__(self):
        f = np.array(self.f, dtype=float)
        if f.ndim != 2:
            raise InfeasiblePolicy("policy table must be two-dimensional")
        if np.any(f < -PROB_TOL) or np.any(f > 1 + PROB_TOL):
            raise InfeasiblePolicy("policy entries must lie in [0, 1]")
        rows = f.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > PROB_TOL):
            bad = int(np.argmax(np.abs(rows - 1.0)))
            raise InfeasiblePolicy(f"row {bad} sums to {rows[bad]!r}")
        f = np.clip(f, 0.0, 1.0)
        f.setflags(write=False)
        object.__setattr__(self, "f", f)

    @classmethod
    def deterministic(cls, actions: Sequence[int], S: int) -> "Policy":
        f = np.zeros((len(actions), S + 1))
        f[np.arange(len(actions)), list(actions)] = 1.0
        return cls(f)

    @property
    def n_states(self) -> int:
        return self.f.shape[0]

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.f == 0.0) | (self.f == 1.0)))

    def actions(self) -> np.ndarray:
        """Chosen action per state; only meaningful for deterministic policies."""
        return np.argmax(self.f, axis=1)

    def differing_rows(self, other: "Policy") -> np.ndarray:
        return np.flatnonzero(np.any(self.f != other.f, axis=1))

    def with_row(self, q: int, row) -> "Policy":
        f = self.f.copy()
        f[q] = row
        return Policy(f)

    def __eq__(self, other):
        if not isinstance(other, Policy):
            return NotImplemented
        return self.f.shape == other.f.shape and bool(np.array_equal(self.f, other.f))

    def __hash__(self):
        return hash(self.f.tobytes())


def check_feasible(model: SystemModel, policy: Policy) -> Policy:
    """Raise :class:`InfeasiblePolicy` unless ``policy`` fits ``model``."""
    if policy.f.shape != (model.Q + 1, model.S + 1):
        raise InfeasiblePolicy(
            f"policy shape {policy.f.shape} does not match (Q+1, S+1) = {(model.Q + 1, model.S + 1)}"
        )
    outside = (policy.f > 0) & ~feasibility_mask(model)
    if np.any(outside):
        q, s = np.argwhere(outside)[0]
        raise InfeasiblePolicy(f"f[{q},{s}] > 0 would under/overflow the buffer")
    return policy


@dataclass(frozen=True)
class ThresholdSpec:
    """Compact threshold description of a policy.

    ``thresholds[s]`` is the largest backlog at which ``s`` (or fewer) packets
    are sent.  With ``mixed_state_index`` set to ``k``, state ``thresholds[k]``
    sends ``k + 1`` packets with probability ``mix_weight`` and ``k``
    otherwise.
    """

    thresholds: tuple
    mixed_state_index: Optional[int] = None
    mix_weight: Optional[float] = None

    def __post_init__(self):
        t = tuple(int(x) for x in self.thresholds)
        object.__setattr__(self, "thresholds", t)
        if not t:
            raise MalformedSpec("need at least one threshold")
        if any(b < a for a, b in zip(t, t[1:])):
            raise MalformedSpec(f"thresholds {t} are not nondecreasing")
        if any(x < -1 for x in t):
            raise MalformedSpec(f"thresholds {t} fall below the -1 sentinel")
        if (self.mixed_state_index is None) != (self.mix_weight is None):
            raise MalformedSpec("mixed_state_index and mix_weight must be given together")
        if self.mixed_state_index is not None:
            k = int(self.mixed_state_index)
            object.__setattr__(self, "mixed_state_index", k)
            object.__setattr__(self, "mix_weight", float(self.mix_weight))
            if not 0 <= k < len(t) - 1:
                raise MalformedSpec(f"mixed index {k} must be in 0..S-1")
            if not 0.0 <= self.mix_weight <= 1.0:
                raise MalformedSpec(f"mix weight {self.mix_weight} outside [0, 1]")

    @property
    def is_deterministic(self) -> bool:
        return self.mixed_state_index is None

    def deterministic_part(self) -> "ThresholdSpec":
        return ThresholdSpec(self.thresholds)

    def __str__(self):
        text = ";".join(str(x) for x in self.thresholds)
        if self.mixed_state_index is not None:
            text += f"@{self.mixed_state_index}:{self.mix_weight!r}"
        return text


def threshold_actions(thresholds: Sequence[int], Q: int) -> np.ndarray:
    """Action per state for a deterministic threshold vector."""
    t = np.asarray(thresholds)
    # s(q) = number of thresholds strictly below q
    return np.searchsorted(t, np.arange(Q + 1), side="left")


def expand_threshold_policy(model: SystemModel, spec: ThresholdSpec) -> Policy:
    """Full policy table for a threshold specification."""
    t = spec.thresholds
    if len(t) != model.S + 1:
        raise MalformedSpec(f"expected {model.S + 1} thresholds, got {len(t)}")
    if t[-1] != model.Q:
        raise MalformedSpec(f"last threshold must equal Q={model.Q}, got {t[-1]}")
    actions = threshold_actions(t, model.Q)
    f = np.zeros((model.Q + 1, model.S + 1))
    f[np.arange(model.Q + 1), actions] = 1.0
    if spec.mixed_state_index is not None:
        k, w = spec.mixed_state_index, spec.mix_weight
        q = t[k]
        if q < 0:
            raise MalformedSpec(f"mixed threshold index {k} refers to an empty band")
        f[q] = 0.0
        f[q, k] = 1.0 - w
        f[q, k + 1] = w
    policy = Policy(f)
    try:
        check_feasible(model, policy)
    except InfeasiblePolicy as exc:
        raise InfeasibleThresholds(f"thresholds {spec}: {exc}") from None
    return policy


def threshold_witness(policy: Policy) -> Optional[tuple]:
    """Smallest nondecreasing thresholds certifying the threshold property.

    Returns ``None`` when no such thresholds exist.  The last threshold is
    always set to the top state so deterministic witnesses re-expand to the
    same policy.
    """
    f = policy.f
    n_states, n_actions = f.shape
    support = f > 0
    prev = -1
    out = []
    for s in range(n_actions):
        rows = np.flatnonzero(support[:, s])
        if rows.size and rows[0] < prev:
            return None
        cur = max(prev, int(rows[-1])) if rows.size else prev
        out.append(cur)
        prev = cur
    out[-1] = n_states - 1
    return tuple(out)


def is_threshold_based(model: SystemModel, policy: Policy):
    """``(True, thresholds)`` if the policy is threshold-based, else ``(False, None)``."""
    check_feasible(model, policy)
    witness = threshold_witness(policy)
    return witness is not None, witness


def build_transition_matrix(model: SystemModel, policy: Policy) -> np.ndarray:
    """Column-stochastic matrix with entry ``(j, i) = Pr{next = j | now = i}``."""
    check_feasible(model, policy)
    n = model.Q + 1
    alpha = model.alpha
    lam = np.zeros((n, n))
    states = np.arange(n)
    for s in range(model.S + 1):
        fs = policy.f[:, s]
        rows = states[fs > 0]
        if rows.size == 0:
            continue
        for a, pa in enumerate(alpha):
            if pa == 0.0:
                continue
            lam[rows - s + a, rows] += pa * fs[rows]
    return lam
