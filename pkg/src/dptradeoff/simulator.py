"""Monte-Carlo simulation of the buffer under a fixed (possibly randomized) policy.

Each slot: draw the batch size from the policy row of the current state,
pay its power, add the arrivals, move the queue.  The slot loop is compiled
with numba; random numbers come from numpy's PCG64 in two independent
streams (actions, arrivals) spawned from one seed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numba
import numpy as np
from scipy import stats

from .errors import InfeasiblePolicy
from .model import Policy, SystemModel, check_feasible, expand_threshold_policy
from .vertex_walk import TradeoffCurve, policy_for_constraint

CHUNK = 1 << 20  # slots per block of pre-drawn uniforms


@dataclass(frozen=True)
class SimulationConfig:
    horizon: int = 1_000_000
    seed: int = 0
    warmup: Optional[int] = None  # None -> horizon // 100
    batch_count: int = 20

    def __post_init__(self):
        if self.warmup is None:
            object.__setattr__(self, "warmup", self.horizon // 100)
        if not (self.horizon > self.warmup >= 0):
            raise ValueError(f"need horizon > warmup >= 0, got {self.horizon} and {self.warmup}")
        if self.batch_count < 2:
            raise ValueError(f"batch_count must be at least 2, got {self.batch_count}")
        if self.horizon - self.warmup < self.batch_count:
            raise ValueError("fewer measured slots than batches")


@dataclass(frozen=True)
class SimulationResult:
    empirical_power: float
    empirical_delay: float
    half_width_power: float
    half_width_delay: float
    slots_simulated: int


def _sampling_table(probs: np.ndarray) -> np.ndarray:
    """Cumulative rows for inverse-CDF sampling.

    The last positive entry of each row is pushed above 1 so rounding in the
    cumulative sum can never select a zero-probability (infeasible) action.
    """
    probs = np.atleast_2d(probs)
    cum = np.cumsum(probs, axis=1)
    for r in range(probs.shape[0]):
        last = np.flatnonzero(probs[r] > 0)[-1]
        cum[r, last:] = 2.0
    return cum


@numba.njit(cache=True)
def _run_block(q, start, u_act, u_arr, act_cum, arr_cum, power, Q, warmup, batch_len, n_batches,
               sum_p, sum_q, sum_a):
    """Advance the queue over one block; returns (q, bad_slot) with bad_slot = -1 if all went well."""
    n_act = act_cum.shape[1]
    n_arr = arr_cum.shape[0]
    for k in range(u_act.shape[0]):
        n = start + k
        s = 0
        while s < n_act - 1 and u_act[k] >= act_cum[q, s]:
            s += 1
        a = 0
        while a < n_arr - 1 and u_arr[k] >= arr_cum[a]:
            a += 1
        if s > q or q - s + a > Q:
            return q, n
        if n >= warmup:
            b = min((n - warmup) // batch_len, n_batches - 1)
            sum_p[b] += power[s]
            sum_q[b] += q
            sum_a[b] += a
        q = q - s + a
    return q, -1


def _half_width(values: np.ndarray) -> float:
    k = len(values)
    return float(stats.t.ppf(0.975, k - 1) * values.std(ddof=1) / np.sqrt(k))


def simulate(model: SystemModel, policy: Policy, config: SimulationConfig) -> SimulationResult:
    """Simulate from an empty buffer; delay is mean queue length over the empirical arrival rate."""
    check_feasible(model, policy)
    act_cum = _sampling_table(policy.f)
    arr_cum = _sampling_table(model.alpha)[0]
    power = np.asarray(model.P, dtype=float)
    act_stream, arr_stream = (np.random.Generator(np.random.PCG64(s))
                              for s in np.random.SeedSequence(config.seed).spawn(2))
    k = config.batch_count
    batch_len = (config.horizon - config.warmup) // k
    sum_p, sum_q, sum_a = np.zeros(k), np.zeros(k), np.zeros(k)
    q = 0
    for start in range(0, config.horizon, CHUNK):
        n = min(CHUNK, config.horizon - start)
        q, bad = _run_block(q, start, act_stream.random(n), arr_stream.random(n), act_cum, arr_cum,
                            power, model.Q, config.warmup, batch_len, k, sum_p, sum_q, sum_a)
        if bad >= 0:
            raise InfeasiblePolicy(f"queue left [0, {model.Q}] at slot {bad}")
    lengths = np.full(k, batch_len, dtype=float)
    lengths[-1] += (config.horizon - config.warmup) - k * batch_len
    batch_power = sum_p / lengths
    batch_delay = np.where(sum_a > 0, sum_q / np.maximum(sum_a, 1.0), np.nan)
    delay = sum_q.sum() / sum_a.sum() if sum_a.sum() > 0 else float("nan")
    return SimulationResult(
        empirical_power=float(sum_p.sum() / lengths.sum()),
        empirical_delay=float(delay),
        half_width_power=_half_width(batch_power),
        half_width_delay=_half_width(batch_delay),
        slots_simulated=config.horizon,
    )


def simulate_curve_points(model: SystemModel, curve: TradeoffCurve, p_th: Sequence[float],
                          config: SimulationConfig) -> List[SimulationResult]:
    """Simulate the optimal mixed threshold policy for each budget in ``p_th``."""
    out = []
    for pth in p_th:
        spec, _ = policy_for_constraint(curve, pth)
        out.append(simulate(model, expand_threshold_policy(model, spec), config))
    return out
