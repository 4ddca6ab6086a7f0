"""
LP Engine — linear program backends for LAIC.

Both backends take the same row form:
    minimize    c·x
    subject to  A x (<=, >=, =) rhs,   lower <= x <= upper

  - simplex: reference implementation. Dense two-phase tableau. The entering
    column is the smallest index with a negative reduced cost (Bland); the
    leaving row comes from a Harris two-pass ratio test, which takes the
    largest pivot among near-ties and never pivots on an element below
    PIVOT_TOL relative to its column. The basic solution is recomputed from
    the original columns every REFACTOR_INTERVAL pivots.
    Iterations are capped at 50 · n_vars across both phases.
  - highs: scipy.optimize.linprog with the HiGHS solver, for problems too
    large for a dense tableau.
"""
from __future__ import annotations

import logging
from typing import Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from models.laic import LpSolution, LpStatus, Sense

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-9
COST_TOL = 1e-10
# primal slack the Harris ratio test may spend on a basic variable
FEAS_TOL = 1e-9
# among ratio near-ties, pivots at least this fraction of the largest are acceptable
ACCEPT_FRACTION = 0.1
REFACTOR_INTERVAL = 50
ITERATIONS_PER_VAR = 50


class _Tableau:
    """Dense tableau; the last row holds reduced costs, the last column the rhs."""

    def __init__(self, T: np.ndarray, basis: np.ndarray, n_art: int):
        self.T = T
        self.basis = basis
        self.n_art = n_art
        self.iterations = 0
        # original rows, kept for refactorization
        self.M = T[:-1, :-1].copy()
        self.b = T[:-1, -1].copy()
        self.cost = np.zeros(T.shape[1] - 1)

    @property
    def m(self) -> int:
        return self.T.shape[0] - 1

    @property
    def n_cols(self) -> int:
        return self.T.shape[1] - 1

    @property
    def value(self) -> float:
        return float(-self.T[-1, -1])

    def pivot(self, r: int, j: int) -> None:
        T = self.T
        row = T[r] / T[r, j]
        T -= np.outer(T[:, j], row)
        T[r] = row
        self.basis[r] = j
        self.iterations += 1
        if self.iterations % REFACTOR_INTERVAL == 0:
            self.refactor()

    def drop_row(self, r: int) -> None:
        self.T = np.delete(self.T, r, axis=0)
        self.basis = np.delete(self.basis, r)
        self.M = np.delete(self.M, r, axis=0)
        self.b = np.delete(self.b, r)

    def set_costs(self, cost: np.ndarray) -> None:
        """Load a cost vector and price it against the current basis."""
        self.cost = np.asarray(cost, dtype=np.float64)
        cb = self.cost[self.basis]
        self.T[-1, :-1] = self.cost - cb @ self.T[:-1, :-1]
        self.T[-1, -1] = -cb @ self.T[:-1, -1]

    def refactor(self) -> None:
        """Rebuild the tableau body as B⁻¹·[M | b] from the original rows."""
        B = self.M[:, self.basis]
        try:
            body = np.linalg.solve(B, np.column_stack([self.M, self.b]))
        except np.linalg.LinAlgError:
            logger.debug(f"Simplex basis singular at pivot {self.iterations}; keeping updated tableau")
            return
        if not np.all(np.isfinite(body)):
            return
        body[:, self.basis] = np.eye(self.m)
        self.T[:-1] = body
        self.set_costs(self.cost)

    def leaving_row(self, col: np.ndarray) -> int:
        """Harris two-pass ratio test; -1 when the column is unbounded."""
        scale = max(1.0, float(np.abs(col).max(initial=0.0)))
        rows = np.flatnonzero(col > PIVOT_TOL * scale)
        if rows.size == 0:
            return -1
        rhs = np.maximum(self.T[rows, -1], 0.0)
        bound = ((rhs + FEAS_TOL) / col[rows]).min()
        near = rows[rhs / col[rows] <= bound]
        pivots = col[near]
        acceptable = near[pivots >= ACCEPT_FRACTION * pivots.max()]
        return int(acceptable[np.argmin(self.basis[acceptable])])

    def run(self, allowed: np.ndarray, max_iter: int, target: float = -np.inf) -> LpStatus:
        while True:
            if self.value <= target:
                return LpStatus.OPTIMAL
            reduced = self.T[-1, :-1]
            candidates = np.flatnonzero((reduced < -COST_TOL) & allowed)
            if candidates.size == 0:
                return LpStatus.OPTIMAL
            if self.iterations >= max_iter:
                return LpStatus.ITERATION_LIMIT
            j = int(candidates[0])
            r = self.leaving_row(self.T[:-1, j])
            if r < 0:
                return LpStatus.UNBOUNDED
            self.pivot(r, j)


def _to_standard(
    A: np.ndarray, senses: Sequence[str], rhs: np.ndarray,
    lower: np.ndarray, upper: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shift x = lower + y and append finite upper bounds as <= rows."""
    if not np.all(np.isfinite(lower)):
        raise ValueError("simplex backend needs finite lower bounds")
    n = A.shape[1]
    b = rhs - A @ lower
    kinds = np.array([Sense(s).value for s in senses], dtype=object)

    finite_ub = np.flatnonzero(np.isfinite(upper))
    if finite_ub.size:
        U = np.zeros((finite_ub.size, n))
        U[np.arange(finite_ub.size), finite_ub] = 1.0
        A = np.vstack([A, U])
        b = np.concatenate([b, upper[finite_ub] - lower[finite_ub]])
        kinds = np.concatenate([kinds, np.array([Sense.LE.value] * finite_ub.size, dtype=object)])

    # everything becomes <= or =, then rows with negative rhs are flipped
    ge = kinds == Sense.GE.value
    A = A.copy()
    A[ge] *= -1.0
    b = b.copy()
    b[ge] *= -1.0
    kinds[ge] = Sense.LE.value
    return A, b, kinds


def solve_simplex(
    c: np.ndarray,
    A,
    senses: Sequence[str],
    rhs: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    max_iter: int = 0,
) -> LpSolution:
    """Two-phase primal simplex."""
    A = A.toarray() if sparse.issparse(A) else np.asarray(A, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    n = c.size
    if max_iter <= 0:
        max_iter = ITERATIONS_PER_VAR * max(n, 1)

    A_std, b, kinds = _to_standard(A, senses, np.asarray(rhs, dtype=np.float64), lower, upper)
    m = A_std.shape[0]

    negative = b < 0
    A_std[negative] *= -1.0
    b[negative] *= -1.0

    is_le = kinds == Sense.LE.value
    slack_sign = np.where(is_le, np.where(negative, -1.0, 1.0), 0.0)
    slack_rows = np.flatnonzero(is_le)
    needs_art = ~(is_le & ~negative)
    art_rows = np.flatnonzero(needs_art)

    n_slack = slack_rows.size
    n_art = art_rows.size
    n_cols = n + n_slack + n_art

    T = np.zeros((m + 1, n_cols + 1))
    T[:m, :n] = A_std
    T[slack_rows, n + np.arange(n_slack)] = slack_sign[slack_rows]
    T[art_rows, n + n_slack + np.arange(n_art)] = 1.0
    T[:m, -1] = b

    basis = np.empty(m, dtype=np.int64)
    slack_col = dict(zip(slack_rows.tolist(), (n + np.arange(n_slack)).tolist()))
    art_col = dict(zip(art_rows.tolist(), (n + n_slack + np.arange(n_art)).tolist()))
    for r in range(m):
        basis[r] = art_col[r] if r in art_col else slack_col[r]

    tab = _Tableau(T, basis, n_art)
    art_start = n + n_slack
    b_scale = max(1.0, float(np.abs(b).max(initial=0.0)))

    # Phase 1: drive the artificial variables to zero
    if n_art:
        phase1 = np.zeros(n_cols)
        phase1[art_start:] = 1.0
        tab.set_costs(phase1)
        status = tab.run(np.ones(n_cols, dtype=bool), max_iter, target=FEAS_TOL * b_scale)
        if status != LpStatus.OPTIMAL:
            return _result(tab, c, lower, n, status)
        if tab.value > 1e-7 * b_scale:
            logger.info(f"Simplex phase 1 ended with infeasibility {tab.value:.3e}")
            return _result(tab, c, lower, n, LpStatus.INFEASIBLE)
        _evict_artificials(tab, art_start)
        tab.refactor()

    # Phase 2: original objective, artificial columns barred from entering
    allowed = np.ones(tab.n_cols, dtype=bool)
    allowed[art_start:] = False
    cost = np.zeros(tab.n_cols)
    cost[:n] = c
    tab.set_costs(cost)
    status = tab.run(allowed, max_iter)
    tab.refactor()
    return _result(tab, c, lower, n, status)


def _evict_artificials(tab: _Tableau, art_start: int) -> None:
    """Pivot zero-valued artificials out of the basis on their largest entry; drop redundant rows."""
    r = 0
    while r < tab.m:
        if tab.basis[r] >= art_start:
            row = np.abs(tab.T[r, :art_start])
            j = int(np.argmax(row)) if row.size else 0
            if row.size and row[j] > PIVOT_TOL:
                tab.pivot(r, j)
            else:
                tab.drop_row(r)
                continue
        r += 1


def _result(tab: _Tableau, c: np.ndarray, lower: np.ndarray, n: int, status: LpStatus) -> LpSolution:
    y = np.zeros(n)
    for r, j in enumerate(tab.basis):
        if j < n:
            y[j] = tab.T[r, -1]
    x = lower + np.maximum(y, 0.0)
    value = float(c @ x)
    logger.debug(f"Simplex finished: {status.value} after {tab.iterations} pivots, objective {value:.6g}")
    return LpSolution(values=x, objective_value=value, status=status,
                      iterations=tab.iterations, backend="simplex")


def solve_highs(
    c: np.ndarray,
    A,
    senses: Sequence[str],
    rhs: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    tol: float = 1e-7,
) -> LpSolution:
    """Solve with scipy's HiGHS interface; feasibility tolerance tightened below `tol`."""
    A = sparse.csr_matrix(A)
    kinds = np.array([Sense(s).value for s in senses], dtype=object)
    le = kinds == Sense.LE.value
    ge = kinds == Sense.GE.value
    eq = kinds == Sense.EQ.value

    A_ub = sparse.vstack([A[le], -A[ge]]).tocsr() if (le.any() or ge.any()) else None
    b_ub = np.concatenate([rhs[le], -rhs[ge]]) if A_ub is not None else None
    A_eq = A[eq] if eq.any() else None
    b_eq = rhs[eq] if eq.any() else None
    bounds = np.column_stack([lower, upper])
    feas = float(min(1e-9, max(1e-10, tol * 1e-2)))

    res = linprog(
        c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs",
        options={"primal_feasibility_tolerance": feas, "dual_feasibility_tolerance": feas},
    )
    status = {
        0: LpStatus.OPTIMAL,
        1: LpStatus.ITERATION_LIMIT,
        2: LpStatus.INFEASIBLE,
        3: LpStatus.UNBOUNDED,
    }.get(res.status, LpStatus.INFEASIBLE)
    if res.x is None:
        x = np.clip(np.zeros_like(c), lower, upper)
    else:
        x = np.clip(res.x, lower, upper)
    iterations = int(getattr(res, "nit", 0) or 0)
    logger.debug(f"HiGHS finished: {res.message} ({iterations} iterations)")
    return LpSolution(values=x, objective_value=float(c @ x), status=status,
                      iterations=iterations, backend="highs")
