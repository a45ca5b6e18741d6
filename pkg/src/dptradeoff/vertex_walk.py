"""Exact delay-power tradeoff curve by walking adjacent vertices.

The walk starts at the minimum-delay policy (send everything) and repeatedly
moves to the neighbouring deterministic threshold policy (one threshold
raised by one) whose segment from the current vertex is flattest.  Points
between two vertices are reached by randomizing in the single state where the
two vertex policies differ.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import InfeasibleConstraint, NotUnichain, SingularSystem
from .model import SystemModel, ThresholdSpec, expand_threshold_policy, threshold_actions
from .steady_state import (
    FactoredPolicy,
    TradeoffPoint,
    evaluate_spec,
    factor_policy,
    mix_weight_for_fraction,
    row_change_offset,
)

SLOPE_RTOL = 1e-9
POINT_ATOL = 1e-9
# offsets are exact rank-one updates, so competing slopes are resolved far
# more finely than the curve's coordinates
TIE_RTOL = 1e-12
POWER_FLOOR = 1e-14


@dataclass(frozen=True)
class SegmentLink:
    """How vertex ``i + 1`` was reached from vertex ``i``."""

    upper: ThresholdSpec   # policy of the higher-power vertex
    lower: ThresholdSpec   # same thresholds with ``index`` raised by one
    index: int


@dataclass
class TradeoffCurve:
    """Vertices in order of decreasing power (and nondecreasing delay).

    Powers are in the model's physical units.
    """

    model: SystemModel
    vertices: List[TradeoffPoint]
    vertex_policies: List[List[ThresholdSpec]]
    links: List[SegmentLink] = field(default_factory=list)
    segment_slopes: Optional[List[float]] = None   # exact dD/dP per segment, physical units

    def __len__(self):
        return len(self.vertices)

    @property
    def powers(self) -> List[float]:
        return [v.power for v in self.vertices]

    @property
    def delays(self) -> List[float]:
        return [v.delay for v in self.vertices]

    def slopes(self) -> List[float]:
        """dD/dP of each segment, in physical units."""
        if self.segment_slopes is not None:
            return list(self.segment_slopes)
        v = self.vertices
        return [(b.delay - a.delay) / (b.power - a.power) for a, b in zip(v, v[1:])]

    def corners(self, tol: float = SLOPE_RTOL) -> List[TradeoffPoint]:
        """Vertices with collinear intermediate breakpoints removed."""
        scale = self.model.power_scale
        pts = self.vertices
        if len(pts) <= 2:
            return list(pts)
        keep = [pts[0]]
        for mid, nxt in zip(pts[1:], pts[2:]):
            prev = keep[-1]
            s1 = (mid.delay - prev.delay) / ((prev.power - mid.power) / scale)
            s2 = (nxt.delay - mid.delay) / ((mid.power - nxt.power) / scale)
            if abs(s2 - s1) > tol * max(1.0, abs(s1)):
                keep.append(mid)
        keep.append(pts[-1])
        return keep

    def delay_at(self, power: float) -> float:
        """Piecewise-linear interpolation of the optimal delay at a power budget."""
        v = self.vertices
        if power >= v[0].power:
            return v[0].delay
        if power < v[-1].power:
            raise InfeasibleConstraint(f"budget {power!r} below the minimum power {v[-1].power!r}")
        for a, b in zip(v, v[1:]):
            if b.power <= power <= a.power:
                t = (a.power - power) / (a.power - b.power)
                return a.delay + t * (b.delay - a.delay)
        return v[-1].delay


def initial_min_delay_spec(model: SystemModel) -> ThresholdSpec:
    """Send the whole backlog below ``A``, and ``A`` packets otherwise."""
    return ThresholdSpec(tuple(s if s < model.A else model.Q for s in range(model.S + 1)))


def candidate_successors(model: SystemModel, spec: ThresholdSpec) -> List[ThresholdSpec]:
    """Specs with one threshold raised by one that stay ordered and feasible.

    Raising ``q(k)`` switches state ``q(k) + 1`` from sending ``k + 1`` to
    sending ``k`` packets.
    """
    t = spec.thresholds
    states = np.arange(model.Q + 1)
    out = []
    for k in range(model.S):
        if t[k] + 1 > t[k + 1]:
            continue
        # state t[k] + 1 would now keep t[k] + 1 - k packets
        if t[k] + 1 - k > model.Q - model.A:
            continue
        cand = ThresholdSpec(t[:k] + (t[k] + 1,) + t[k + 1:])
        acts = threshold_actions(cand.thresholds, model.Q)
        if np.any(acts > states) or np.any(states - acts > model.Q - model.A):
            continue
        out.append(cand)
    return out


def _changed_index(upper: ThresholdSpec, lower: ThresholdSpec) -> int:
    diff = [k for k, (a, b) in enumerate(zip(upper.thresholds, lower.thresholds)) if a != b]
    return diff[0]


def _changed_row(model: SystemModel, parent: ThresholdSpec, child: ThresholdSpec):
    a = threshold_actions(parent.thresholds, model.Q)
    b = threshold_actions(child.thresholds, model.Q)
    q = int(np.flatnonzero(a != b)[0])
    row = np.zeros(model.S + 1)
    row[b[q]] = 1.0
    return q, row


def trace_curve(model: SystemModel) -> TradeoffCurve:
    """Every vertex of the optimal delay-power curve, from minimum delay to minimum power.

    Candidate points are scored as exact offsets from their parent policy
    (they differ in one row), so steps far below the point tolerance are
    still ordered correctly.  Power decrements under ``POWER_FLOOR`` cannot
    be told apart in double precision and end the walk.
    """
    norm = model.normalized()
    scale = model.power_scale
    factored: Dict[tuple, Optional[FactoredPolicy]] = {}
    absolute: Dict[tuple, Tuple[float, float]] = {}

    def factor(spec: ThresholdSpec) -> Optional[FactoredPolicy]:
        key = spec.thresholds
        if key not in factored:
            try:
                factored[key] = factor_policy(norm, expand_threshold_policy(norm, spec))
            except (NotUnichain, SingularSystem):
                factored[key] = None
        return factored[key]

    def point(spec: ThresholdSpec) -> Tuple[float, float]:
        key = spec.thresholds
        if key not in absolute:
            pt = evaluate_spec(norm, spec)
            absolute[key] = (pt.power, pt.delay)
        return absolute[key]

    def offset(parent: ThresholdSpec, parent_off, cand: ThresholdSpec, vertex) -> Tuple[float, float]:
        base = factor(parent)
        if base is not None:
            q, row = _changed_row(norm, parent, cand)
            try:
                dp, dd = row_change_offset(norm, base, q, row)
                return parent_off[0] + dp, parent_off[1] + dd
            except SingularSystem:
                pass
        p, d = point(cand)
        return p - vertex[0], d - vertex[1]

    start = initial_min_delay_spec(model)
    vertex = point(start)
    points = [vertex]
    policies: List[List[ThresholdSpec]] = [[start]]
    links: List[SegmentLink] = []
    slopes: List[float] = []
    # frontier members sit on the current vertex; offsets are relative to it
    frontier: List[Tuple[ThresholdSpec, Tuple[float, float]]] = [(start, (0.0, 0.0))]

    while True:
        best: List[Tuple[ThresholdSpec, ThresholdSpec, Tuple[float, float]]] = []
        best_slope = math.inf
        best_off = None
        floor = POWER_FLOOR * max(1.0, abs(vertex[0]))
        on_vertex = set(spec.thresholds for spec, _ in frontier)
        i = 0
        while i < len(frontier):
            parent, parent_off = frontier[i]
            i += 1
            for cand in candidate_successors(norm, parent):
                off = offset(parent, parent_off, cand, vertex)
                if abs(off[0]) <= POINT_ATOL and abs(off[1]) <= POINT_ATOL:
                    if cand.thresholds not in on_vertex:
                        on_vertex.add(cand.thresholds)
                        frontier.append((cand, off))
                    continue
                if not (off[1] >= -POINT_ATOL and off[0] < -floor):
                    continue
                slope = off[1] / -off[0]
                tie = abs(slope - best_slope) <= TIE_RTOL * max(1.0, abs(slope))
                if not tie and slope < best_slope:
                    best, best_slope, best_off = [(cand, parent, off)], slope, off
                elif tie:
                    if abs(off[0] - best_off[0]) <= POINT_ATOL and abs(off[1] - best_off[1]) <= POINT_ATOL:
                        if all(cand != c for c, _, _ in best):
                            best.append((cand, parent, off))
                    elif off[0] > best_off[0]:
                        # equal slope, nearer point: keep the intermediate breakpoint
                        best, best_slope, best_off = [(cand, parent, off)], slope, off
        policies[-1] = [spec for spec, _ in frontier]
        if not best:
            break
        child, parent, _ = best[0]
        links.append(SegmentLink(parent, child, _changed_index(parent, child)))
        slopes.append(best_slope)
        vertex = (vertex[0] + best_off[0], vertex[1] + best_off[1])
        points.append(vertex)
        policies.append([c for c, _, _ in best])
        frontier = [(c, (off[0] - best_off[0], off[1] - best_off[1])) for c, _, off in best]

    vertices = [
        TradeoffPoint(p * scale, d, specs[0]) for (p, d), specs in zip(points, policies)
    ]
    return TradeoffCurve(model, vertices, policies, links, [-sl / scale for sl in slopes])


def policy_for_constraint(curve: TradeoffCurve, p_th: float) -> Tuple[ThresholdSpec, TradeoffPoint]:
    """Delay-optimal (possibly randomized) threshold policy under an average power budget."""
    v = curve.vertices
    if not v:
        raise ValueError("empty curve")
    scale = curve.model.power_scale
    atol = POINT_ATOL * scale
    if p_th >= v[0].power - atol:
        return curve.vertex_policies[0][0], v[0]
    if p_th < v[-1].power - atol:
        raise InfeasibleConstraint(f"budget {p_th!r} is below the minimum achievable power {v[-1].power!r}")
    for i, vert in enumerate(v):
        if abs(p_th - vert.power) <= atol:
            return curve.vertex_policies[i][0], vert
    i = next(i for i in range(len(v) - 1) if v[i + 1].power < p_th < v[i].power)
    link = curve.links[i]
    hi, lo = v[i], v[i + 1]
    fraction = (hi.power - p_th) / (hi.power - lo.power)  # 0 at the upper vertex
    model = curve.model.normalized()
    upper = expand_threshold_policy(model, link.upper)
    lower = expand_threshold_policy(model, link.lower)
    # weight on the upper policy, measured from the lower one
    w = mix_weight_for_fraction(model, lower, upper, 1.0 - fraction)
    w = min(1.0, max(0.0, w))
    spec = ThresholdSpec(link.lower.thresholds, link.index, w)
    delay = hi.delay + fraction * (lo.delay - hi.delay)
    return spec, TradeoffPoint(p_th, delay, spec)


def shape_violations(curve: TradeoffCurve, tol: float = SLOPE_RTOL) -> List[str]:
    """Names of the structural invariants an optimal tradeoff curve breaks (empty if none).

    strictly_decreasing: power falls and delay rises from vertex to vertex.
    convex_slopes: dD/dP (normalized power) gets steeper toward low power.
    deterministic_vertices: every vertex policy is a pure threshold policy.
    single_threshold_step: linked vertices differ in one threshold, raised by exactly 1.
    """
    bad = []
    p = np.array(curve.powers, dtype=float)
    d = np.array(curve.delays, dtype=float)
    if np.any(np.diff(p) >= 0) or np.any(np.diff(d) <= 0):
        bad.append("strictly_decreasing")
    slopes = np.array(curve.slopes(), dtype=float) * curve.model.power_scale
    if np.any(slopes[1:] > slopes[:-1] + tol * np.maximum(1.0, np.abs(slopes[:-1]))):
        bad.append("convex_slopes")
    if not all(s.is_deterministic for specs in curve.vertex_policies for s in specs):
        bad.append("deterministic_vertices")
    step_ok = len(curve.links) == len(curve.vertices) - 1
    for i, link in enumerate(curve.links if step_ok else []):
        diff = np.array(link.lower.thresholds) - np.array(link.upper.thresholds)
        if (np.count_nonzero(diff) != 1 or diff[link.index] != 1
                or link.upper not in curve.vertex_policies[i]
                or link.lower not in curve.vertex_policies[i + 1]):
            step_ok = False
    if not step_ok:
        bad.append("single_threshold_step")
    return bad
