"""Brute-force reference for small instances.

Enumerates every deterministic feasible policy, scores each one, and takes
the lower-left convex hull of the resulting point cloud.  Exponential in Q;
meant for Q of about 8 or less.
"""
from __future__ import annotations

import itertools
from typing import List, Tuple

import numpy as np

from .model import Policy, SystemModel, feasible_actions
from .steady_state import evaluate_from_empty


def _batch_points(model: SystemModel, actions: np.ndarray) -> np.ndarray:
    """Score many deterministic policies at once; NaN rows mark singular systems."""
    n_pol, n = actions.shape
    lam = np.zeros((n_pol, n, n))
    cols = np.arange(n)
    rows = np.arange(n_pol)[:, None]
    for a, pa in enumerate(model.alpha):
        if pa > 0:
            np.add.at(lam, (rows, cols[None, :] - actions + a, cols[None, :]), pa)
    H = lam - np.eye(n)
    H[:, 1:] = H[:, :-1].copy()
    H[:, 0] = 1.0
    c = np.zeros(n)
    c[0] = 1.0
    out = np.full((n_pol, 2), np.nan)
    try:
        pi = np.linalg.solve(H, np.broadcast_to(c, (n_pol, n))[..., None])[..., 0]
        # one refinement step brings the batched solve to LU-per-policy accuracy
        r = c - np.einsum("kij,kj->ki", H, pi)
        pi = pi + np.linalg.solve(H, r[..., None])[..., 0]
    except np.linalg.LinAlgError:
        return out
    resid = np.abs(np.einsum("kij,kj->ki", lam, pi) - pi).max(axis=1)
    good = (resid < 1e-10) & (pi.min(axis=1) > -1e-10)
    out[good, 0] = (pi * model.P[actions])[good].sum(axis=1)
    out[good, 1] = (pi @ cols)[good] / model.mean_arrival
    return out


def enumerate_deterministic_points(model: SystemModel, chunk: int = 4096) -> np.ndarray:
    """(power, delay) of every deterministic feasible policy, shape (n, 2)."""
    choices = [list(feasible_actions(model, q)) for q in range(model.Q + 1)]
    combos = itertools.product(*choices)
    pts = []
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=int)
        if block.size == 0:
            break
        res = _batch_points(model, block)
        # multichain or ill-conditioned systems go through the exact slow path
        for k in np.flatnonzero(np.isnan(res[:, 0])):
            pt = evaluate_from_empty(model, Policy.deterministic(block[k], model.S))
            res[k] = (pt.power, pt.delay)
        pts.append(res)
    return np.concatenate(pts)


def lower_left_hull(points: np.ndarray, tol: float = 1e-12) -> List[Tuple[float, float]]:
    """Vertices of the Pareto-lower convex boundary, ordered by decreasing power.

    Powers within ``tol`` of the minimum (and delays within ``tol`` of the
    minimum) are treated as ties, as are powers within ``tol`` of each other
    (the lowest delay wins); this absorbs solver noise on slowly mixing
    policies.
    """
    pts = np.asarray(points, dtype=float)
    p_min, d_min = pts[:, 0].min(), pts[:, 1].min()
    near = pts[pts[:, 0] <= p_min + tol]
    left = tuple(near[np.argmin(near[:, 1])])
    near = pts[pts[:, 1] <= d_min + tol]
    right = tuple(near[np.argmin(near[:, 0])])
    inner = pts[(pts[:, 0] > left[0] + tol) & (pts[:, 0] < right[0] - tol)]
    chain = [left]
    # within a cluster of equal powers only the lowest delay can be on the hull
    for p in sorted(set(map(tuple, inner))):
        if abs(p[0] - chain[-1][0]) <= tol:
            if p[1] < chain[-1][1] and len(chain) > 1:
                chain[-1] = p
            continue
        chain.append(p)
    if abs(right[0] - chain[-1][0]) <= tol and len(chain) > 1:
        chain.pop()
    if abs(right[0] - left[0]) > tol or abs(right[1] - left[1]) > tol:
        chain.append(right)
    hull: List[Tuple[float, float]] = []
    for p in chain:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) <= 0.0:
                hull.pop()
            else:
                break
        hull.append(p)
    return [(float(x), float(y)) for x, y in hull[::-1]]


def _distance_to_polyline(point, line) -> float:
    """Euclidean distance from ``point`` to the nearest segment of ``line``."""
    p = np.asarray(point, dtype=float)
    best = float("inf")
    for a, b in zip(line, line[1:]):
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        ab = b - a
        t = 0.0 if not ab.any() else float(np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0))
        best = min(best, float(np.linalg.norm(p - (a + t * ab))))
    return best


def curve_mismatch(curve_a, curve_b, tol: float = 1e-9) -> float:
    """Largest deviation between two convex polylines given as (power, delay) vertices.

    Both must share endpoints and each vertex of one must lie on the other;
    collinear breakpoints present in only one of them are ignored.
    """
    a = [tuple(map(float, v)) for v in curve_a]
    b = [tuple(map(float, v)) for v in curve_b]
    worst = 0.0
    for end in (0, -1):
        worst = max(worst, abs(a[end][0] - b[end][0]), abs(a[end][1] - b[end][1]))
    for pt in a[1:-1]:
        worst = max(worst, _distance_to_polyline(pt, b) if len(b) > 1 else float("inf"))
    for pt in b[1:-1]:
        worst = max(worst, _distance_to_polyline(pt, a) if len(a) > 1 else float("inf"))
    return worst


def brute_force_curve(model: SystemModel) -> List[Tuple[float, float]]:
    return lower_left_hull(enumerate_deterministic_points(model))
