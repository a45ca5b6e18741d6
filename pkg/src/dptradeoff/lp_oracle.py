"""Occupation-measure LP for the constrained problem, solved by a dense simplex.

Variables are ``x[q, s] = pi(q) * f(q, s)``.  Only pairs with
``0 <= q - s <= Q - A`` get a column.  All power figures inside the LP are
in normalized units (largest cost 1).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, TextIO, Tuple

import numpy as np
from scipy import linalg

from .errors import InfeasibleConstraint, NumericalBreakdown, ReductionImpossible
from .model import Policy, SystemModel, build_transition_matrix, expand_threshold_policy, feasible_actions
from .steady_state import classify_chain, reduce_to_unichain
from .vertex_walk import initial_min_delay_spec

PIVOT_MIN = 1e-11
PIVOT_ELIGIBLE = 1e-9
HARRIS_SLACK = 1e-12
SHIFT_MAX = 1e-8
COST_TOL = 1e-11
FEAS_TOL = 1e-9
SUPPORT_MIN = 1e-12


@dataclass
class LinearProgram:
    """``min c @ x`` s.t. ``A_ub @ x <= b_ub``, ``A_eq @ x == b_eq``, ``lower <= x <= upper``."""

    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    columns: Dict[Tuple[int, int], int] = field(default_factory=dict)

    @property
    def n_vars(self) -> int:
        return len(self.c)


@dataclass
class SimplexSolution:
    status: str                     # "optimal", "infeasible" or "unbounded"
    value: Optional[float] = None
    x: Optional[np.ndarray] = None
    basis: List[int] = field(default_factory=list)
    reduced_costs: Optional[np.ndarray] = None
    iterations: int = 0


def build_lp(model: SystemModel, p_th: float) -> LinearProgram:
    """LP whose optimum is the least delay at normalized power budget ``p_th``."""
    Q, A, S = model.Q, model.A, model.S
    alpha = model.alpha
    columns: Dict[Tuple[int, int], int] = {}
    for q in range(Q + 1):
        for s in feasible_actions(model, q):
            columns[(q, s)] = len(columns)
    n = len(columns)

    c = np.zeros(n)
    power_row = np.zeros(n)
    ones = np.ones(n)
    for (q, s), j in columns.items():
        c[j] = q / model.mean_arrival
        power_row[j] = model.P[s]

    def add(row, q, s, value):
        j = columns.get((q, s))
        if j is not None:
            row[j] += value

    # flow across the cut between states {0..q-1} and {q..Q}
    balance = np.zeros((Q, n))
    for q in range(1, Q + 1):
        row = balance[q - 1]
        for l in range(max(0, q - A), q):
            for a in range(A + 1):
                for s in range(0, l + a - q + 1):
                    add(row, l, s, alpha[a])
        for r in range(q, min(q + S - 1, Q) + 1):
            for a in range(A + 1):
                for s in range(r + a - q + 1, S + 1):
                    add(row, r, s, -alpha[a])

    A_eq = np.vstack([balance, ones])
    b_eq = np.zeros(Q + 1)
    b_eq[-1] = 1.0
    return LinearProgram(
        c=c,
        A_ub=power_row[None, :],
        b_ub=np.array([float(p_th)]),
        A_eq=A_eq,
        b_eq=b_eq,
        lower=np.zeros(n),
        upper=np.full(n, np.inf),
        columns=columns,
    )


def _standard_form(lp: LinearProgram):
    """Rows ``M y = b`` with ``y >= 0`` after shifting by the lower bounds."""
    n = lp.n_vars
    shift = np.asarray(lp.lower, dtype=float)
    ub_rows = [np.asarray(lp.A_ub, dtype=float).reshape(-1, n)]
    ub_rhs = [np.asarray(lp.b_ub, dtype=float).ravel()]
    finite = np.flatnonzero(np.isfinite(lp.upper))
    if finite.size:
        ub_rows.append(np.eye(n)[finite])
        ub_rhs.append(np.asarray(lp.upper, dtype=float)[finite])
    G = np.vstack(ub_rows)
    h = np.concatenate(ub_rhs) - G @ shift
    E = np.asarray(lp.A_eq, dtype=float).reshape(-1, n)
    e = np.asarray(lp.b_eq, dtype=float).ravel() - E @ shift
    m_ub, m_eq = len(G), len(E)
    M = np.zeros((m_ub + m_eq, n + m_ub))
    M[:m_ub, :n] = G
    M[:m_ub, n:] = np.eye(m_ub)
    M[m_ub:, :n] = E
    b = np.concatenate([h, e])
    return M, b, shift


class _Basis:
    """Dense LU of the current basis columns, rebuilt after every pivot.

    Solves are polished by iterative refinement with residuals accumulated in
    extended precision; bases of this LP get badly conditioned when the
    optimal occupation measure spans many orders of magnitude.
    """

    REFINE_STEPS = 3

    def __init__(self, M: np.ndarray, cols: List[int]):
        self.cols = cols
        self.B = M[:, cols]
        self.B_ext = self.B.astype(np.longdouble)
        self.lu = None
        if not cols:  # no constraint rows left
            return
        try:
            self.lu = linalg.lu_factor(self.B, check_finite=False)
        except (linalg.LinAlgError, ValueError) as exc:
            raise NumericalBreakdown(f"singular basis: {exc}") from None

    def _refined(self, v: np.ndarray, trans: int) -> np.ndarray:
        if self.lu is None:
            return np.zeros(0)
        mat = self.B_ext.T if trans else self.B_ext
        v_ext = np.asarray(v, dtype=np.longdouble)
        x = linalg.lu_solve(self.lu, v, trans=trans, check_finite=False)
        for _ in range(self.REFINE_STEPS):
            r = (v_ext - mat @ x.astype(np.longdouble)).astype(float)
            if not r.any():
                break
            x = x + linalg.lu_solve(self.lu, r, trans=trans, check_finite=False)
        return x

    def solve(self, v: np.ndarray) -> np.ndarray:
        return self._refined(v, 0)

    def solve_t(self, v: np.ndarray) -> np.ndarray:
        return self._refined(v, 1)


def _reduced_costs(M: np.ndarray, cost: np.ndarray, B: _Basis) -> Tuple[np.ndarray, np.ndarray]:
    """Reduced costs and a per-column scale for judging their sign."""
    y = B.solve_t(cost[B.cols])
    reduced = cost - M.T @ y
    scale = 1.0 + np.abs(cost) + np.abs(M).T @ np.abs(y)
    reduced[B.cols] = 0.0
    return reduced, scale


def _bland(M: np.ndarray, b: np.ndarray, cost: np.ndarray, basis: List[int],
           allowed: np.ndarray, max_iter: int, target: Optional[float] = None) -> Tuple[str, int]:
    """Revised simplex pivots with Bland's rule; ``basis`` and ``b`` are updated in place.

    Roundoff-level negative basic values are removed by shifting ``b`` so the
    current basis is exactly feasible; left alone, degenerate pivots on an
    ill-conditioned basis amplify them geometrically.  With ``target`` set,
    stops as soon as the objective is at or below it.
    """
    # pure Bland (guaranteed termination) takes over if pivoting runs long
    harris_until = max_iter // 2
    for it in range(max_iter):
        B = _Basis(M, basis)
        x_b = B.solve(b)
        if x_b.size and x_b.min() < 0.0:
            if x_b.min() < -SHIFT_MAX * max(1.0, np.abs(x_b).max()):
                raise NumericalBreakdown(f"basic solution lost feasibility ({x_b.min()!r})")
            x_b = np.maximum(x_b, 0.0)
            b[:] = B.B @ x_b
        if target is not None and cost[basis] @ x_b <= target:
            return "optimal", it
        reduced, scale = _reduced_costs(M, cost, B)
        entering = np.flatnonzero(allowed & (reduced < -COST_TOL * scale))
        if entering.size == 0:
            return "optimal", it
        col = int(entering[0])
        u = B.solve(M[:, col])
        rows = np.flatnonzero(u > PIVOT_ELIGIBLE)
        if rows.size == 0:
            return "unbounded", it
        ratios = x_b[rows] / u[rows]
        if it < harris_until:
            # Harris pass: rows that bind within a 1e-9 infeasibility allowance,
            # then the largest pivot among them for a well-conditioned basis
            step = ((x_b[rows] + HARRIS_SLACK) / u[rows]).min()
            tied = rows[ratios <= step]
            row = int(max(tied, key=lambda r: (u[r], -basis[r])))
        else:
            best = ratios.min()
            tied = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
            # Bland: among tied rows, the one whose basic variable has the lowest index
            row = int(min(tied, key=lambda r: basis[r]))
        if abs(u[row]) < PIVOT_MIN:
            raise NumericalBreakdown(f"pivot {u[row]!r} below {PIVOT_MIN}")
        basis[row] = col
    raise NumericalBreakdown(f"simplex did not terminate in {max_iter} pivots")


def solve_simplex(lp: LinearProgram, max_iter: Optional[int] = None) -> SimplexSolution:
    """Two-phase dense simplex with Bland's rule.

    The basis is refactorized from the original data at every pivot, so
    rounding does not accumulate across iterations the way it does in a
    tableau.
    """
    n = lp.n_vars
    if np.any(np.asarray(lp.lower) > np.asarray(lp.upper)):
        return SimplexSolution("infeasible")
    M, b, shift = _standard_form(lp)
    m, n_std = M.shape
    flip = b < 0
    M[flip] *= -1
    b[flip] *= -1
    limit = max_iter if max_iter is not None else 50 * (m + n_std + 10)

    # phase 1: one artificial per row
    M1 = np.hstack([M, np.eye(m)])
    cost1 = np.concatenate([np.zeros(n_std), np.ones(m)])
    basis = list(range(n_std, n_std + m))
    feas_tol = FEAS_TOL * max(1.0, np.abs(b).max(initial=0.0))
    _, it1 = _bland(M1, b, cost1, basis, np.ones(n_std + m, dtype=bool), limit, target=1e-3 * feas_tol)
    B = _Basis(M1, basis)
    x_b = B.solve(b)
    artificial = np.array([j >= n_std for j in basis], dtype=bool)
    if x_b[artificial].sum() > feas_tol:
        return SimplexSolution("infeasible", iterations=it1)
    # leftover artificial mass is below tolerance; move b so it is exactly zero
    x_b[artificial] = 0.0
    b[:] = B.B @ np.maximum(x_b, 0.0)

    # swap zero-level artificials for real columns; rows where none fits are redundant
    keep = list(range(m))
    for r in range(m):
        if basis[r] < n_std:
            continue
        B = _Basis(M1, basis)
        row_r = B.solve_t(np.eye(m)[r]) @ M
        row_r[[j for j in basis if j < n_std]] = 0.0
        # any column works at zero level; the largest entry keeps the basis well conditioned
        j = int(np.argmax(np.abs(row_r)))
        if abs(row_r[j]) > 1e-9:
            basis[r] = j
        else:
            keep.remove(r)
    M2 = M[keep]
    b2 = b[keep]
    basis = [basis[r] for r in keep]

    # phase 2
    cost = np.zeros(n_std)
    cost[:n] = lp.c
    status, it2 = _bland(M2, b2, cost, basis, np.ones(n_std, dtype=bool), limit)
    if status == "unbounded":
        return SimplexSolution("unbounded", iterations=it1 + it2)
    B = _Basis(M2, basis)
    y = np.zeros(n_std)
    y[basis] = np.maximum(B.solve(b2), 0.0)
    reduced, _ = _reduced_costs(M2, cost, B)
    x = y[:n] + shift
    return SimplexSolution(
        "optimal",
        value=float(np.asarray(lp.c) @ x),
        x=x,
        basis=list(basis),
        reduced_costs=reduced,
        iterations=it1 + it2,
    )


def check_certificate(lp: LinearProgram, sol: SimplexSolution, tol: float = FEAS_TOL) -> bool:
    """Primal feasibility and nonnegative reduced costs, both within ``tol``."""
    if sol.status != "optimal":
        return False
    x = sol.x
    ok = np.all(lp.A_ub @ x <= lp.b_ub + tol)
    ok &= np.allclose(lp.A_eq @ x, lp.b_eq, atol=tol, rtol=0.0)
    ok &= np.all(x >= lp.lower - tol) and np.all(x <= lp.upper + tol)
    ok &= np.all(sol.reduced_costs >= -tol)
    return bool(ok)


def occupation_measure(model: SystemModel, policy: Policy, pi, columns: Dict[Tuple[int, int], int]) -> np.ndarray:
    """``x[q, s] = pi(q) f(q, s)`` laid out in LP column order."""
    x = np.zeros(len(columns))
    for (q, s), j in columns.items():
        x[j] = pi[q] * policy.f[q, s]
    return x


def recover_policy(model: SystemModel, lp: LinearProgram, x: np.ndarray) -> Policy:
    """Row-normalize the occupation measure; empty rows take the min-delay action."""
    occ = np.zeros((model.Q + 1, model.S + 1))
    for (q, s), j in lp.columns.items():
        occ[q, s] = max(x[j], 0.0)
    mass = occ.sum(axis=1)
    f = expand_threshold_policy(model, initial_min_delay_spec(model)).f.copy()
    live = mass > SUPPORT_MIN
    f[live] = occ[live] / mass[live, None]
    policy = Policy(f)
    lam = build_transition_matrix(model, policy)
    cls = classify_chain(lam)
    if cls.is_unichain:
        return policy
    # the occupied states sit in closed classes; keep the one holding the most mass
    target = max(cls.closed_classes, key=lambda c: mass[sorted(c)].sum())
    try:
        return reduce_to_unichain(model, policy, target)
    except ReductionImpossible:
        # some state is absorbing under every action; the chain started empty never sees it
        return policy


def lp_optimal_delay(model: SystemModel, p_th: float) -> Tuple[float, Policy]:
    """Least average delay under average power ``p_th`` (physical units) and a policy achieving it."""
    norm = model.normalized()
    lp = build_lp(norm, p_th / model.power_scale)
    sol = solve_simplex(lp)
    if sol.status != "optimal":
        raise InfeasibleConstraint(f"no policy meets power budget {p_th!r} ({sol.status})")
    return sol.value, recover_policy(norm, lp, sol.x)


def write_triplets(lp: LinearProgram, out: TextIO) -> None:
    """Dump ``lp`` as plain text sections of sparse ``row col value`` triplets.

    Layout::

        DIMS n_vars n_ub n_eq
        COLUMNS      one line per column: index q s
        OBJECTIVE    col value
        UB           row col value
        UB_RHS       row value
        EQ           row col value
        EQ_RHS       row value
        BOUNDS       col lower upper
        END
    """
    w = out.write
    w(f"DIMS {lp.n_vars} {len(lp.b_ub)} {len(lp.b_eq)}\n")
    w("COLUMNS\n")
    for (q, s), j in sorted(lp.columns.items(), key=lambda kv: kv[1]):
        w(f"{j} {q} {s}\n")
    w("OBJECTIVE\n")
    for j in np.flatnonzero(lp.c):
        w(f"{j} {float(lp.c[j])!r}\n")
    for name, mat, rhs in (("UB", lp.A_ub, lp.b_ub), ("EQ", lp.A_eq, lp.b_eq)):
        w(f"{name}\n")
        for i, j in zip(*np.nonzero(mat)):
            w(f"{i} {j} {float(mat[i, j])!r}\n")
        w(f"{name}_RHS\n")
        for i, v in enumerate(rhs):
            w(f"{i} {float(v)!r}\n")
    w("BOUNDS\n")
    for j in range(lp.n_vars):
        w(f"{j} {float(lp.lower[j])!r} {float(lp.upper[j])!r}\n")
    w("END\n")
