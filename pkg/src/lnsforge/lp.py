"""Two-phase bounded-variable primal simplex for LP relaxations.

The problem solved is ``min c^T x  s.t.  Ax <= b, lb <= x <= ub`` with finite
``lb``. One slack per row is added; rows whose slack would start negative get
an artificial variable that Phase 1 drives to zero. Pricing is Dantzig's rule,
switching to Bland's rule after ``3 * (n + m)`` consecutive degenerate pivots.
The pivot loop is compiled with numba.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numba import njit

from .mip import FEAS_TOL, MipInstance

_OPTIMAL, _INFEASIBLE, _UNBOUNDED, _ITERLIMIT = 0, 1, 2, 3

PIVOT_TOL = 1e-9
COST_TOL = 1e-9
PHASE1_TOL = 1e-6


class LpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITERATION_LIMIT = "IterationLimit"


_STATUS = {
    _OPTIMAL: LpStatus.OPTIMAL,
    _INFEASIBLE: LpStatus.INFEASIBLE,
    _UNBOUNDED: LpStatus.UNBOUNDED,
    _ITERLIMIT: LpStatus.ITERATION_LIMIT,
}


@dataclass
class LpResult:
    status: LpStatus
    x: np.ndarray | None = None
    objective: float | None = None
    iterations: int = 0
    phase1_objective: float = 0.0

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


@njit(cache=True)
def _run_phase(T, beta, basis, at_upper, is_basic, lo, hi, cost, n_orig, max_iter, iters):
    m, N = T.shape
    # reduced costs d_j = cost_j - cost_B^T T[:, j]
    d = cost.copy()
    for r in range(m):
        cb = cost[basis[r]]
        if cb != 0.0:
            for j in range(N):
                d[j] -= cb * T[r, j]
    degenerate = 0
    bland = False
    limit_degenerate = 3 * n_orig
    while True:
        q = -1
        best = 0.0
        for j in range(N):
            if is_basic[j] or hi[j] <= lo[j]:
                continue
            if at_upper[j]:
                score = d[j]
            else:
                score = -d[j]
            if score > COST_TOL:
                if bland:
                    q = j
                    break
                if score > best:
                    best = score
                    q = j
        if q == -1:
            return _OPTIMAL, iters
        if iters >= max_iter:
            return _ITERLIMIT, iters
        iters += 1
        sigma = -1.0 if at_upper[q] else 1.0

        theta = hi[q] - lo[q]
        leave = -1
        leave_piv = 0.0
        for r in range(m):
            alpha = sigma * T[r, q]
            if alpha > PIVOT_TOL:
                bl = lo[basis[r]]
                if bl == -np.inf:
                    continue
                lim = (beta[r] - bl) / alpha
            elif alpha < -PIVOT_TOL:
                bu = hi[basis[r]]
                if bu == np.inf:
                    continue
                lim = (bu - beta[r]) / (-alpha)
            else:
                continue
            if lim < 0.0:
                lim = 0.0
            if lim < theta - 1e-12:
                theta = lim
                leave = r
                leave_piv = abs(alpha)
            elif leave != -1 and lim <= theta + 1e-12:
                if bland:
                    better = basis[r] < basis[leave]
                else:
                    better = abs(alpha) > leave_piv
                if better:
                    theta = min(theta, lim)
                    leave = r
                    leave_piv = abs(alpha)
        if theta == np.inf:
            return _UNBOUNDED, iters

        for r in range(m):
            beta[r] -= sigma * theta * T[r, q]

        if theta <= 1e-12:
            degenerate += 1
            if degenerate > limit_degenerate:
                bland = True
        else:
            degenerate = 0
            bland = False

        if leave == -1:
            at_upper[q] = not at_upper[q]
            continue

        start = hi[q] if at_upper[q] else lo[q]
        leaving = basis[leave]
        at_upper[leaving] = sigma * T[leave, q] < 0.0
        is_basic[leaving] = False
        is_basic[q] = True
        at_upper[q] = False
        basis[leave] = q
        beta[leave] = start + sigma * theta

        piv = T[leave, q]
        for j in range(N):
            T[leave, j] /= piv
        for r in range(m):
            if r == leave:
                continue
            f = T[r, q]
            if f != 0.0:
                for j in range(N):
                    T[r, j] -= f * T[leave, j]
                T[r, q] = 0.0
        f = d[q]
        if f != 0.0:
            for j in range(N):
                d[j] -= f * T[leave, j]
            d[q] = 0.0


@njit(cache=True)
def _simplex(A, b, c, lb, ub, max_iter):
    m, n = A.shape
    x0 = lb.copy()
    resid = b - A @ x0 if m > 0 else np.zeros(0)
    n_art = 0
    for r in range(m):
        if resid[r] < 0.0:
            n_art += 1
    N = n + m + n_art
    T = np.zeros((m, N))
    beta = np.zeros(m)
    basis = np.zeros(m, dtype=np.int64)
    lo = np.zeros(N)
    hi = np.full(N, np.inf)
    lo[:n] = lb
    hi[:n] = ub
    at_upper = np.zeros(N, dtype=np.bool_)
    is_basic = np.zeros(N, dtype=np.bool_)
    k = n + m
    for r in range(m):
        if resid[r] >= 0.0:
            T[r, :n] = A[r]
            T[r, n + r] = 1.0
            basis[r] = n + r
            beta[r] = resid[r]
        else:
            T[r, :n] = -A[r]
            T[r, n + r] = -1.0
            T[r, k] = 1.0
            basis[r] = k
            beta[r] = -resid[r]
            k += 1
        is_basic[basis[r]] = True

    iters = 0
    phase1 = 0.0
    if n_art > 0:
        cost1 = np.zeros(N)
        cost1[n + m:] = 1.0
        status, iters = _run_phase(T, beta, basis, at_upper, is_basic, lo, hi, cost1, n + m, max_iter, iters)
        if status == _ITERLIMIT:
            return status, T, beta, basis, at_upper, iters, phase1
        for r in range(m):
            if basis[r] >= n + m:
                phase1 += beta[r]
        if phase1 > PHASE1_TOL:
            return _INFEASIBLE, T, beta, basis, at_upper, iters, phase1
        for j in range(n + m, N):
            hi[j] = 0.0
            at_upper[j] = False
    cost2 = np.zeros(N)
    cost2[:n] = c
    status, iters = _run_phase(T, beta, basis, at_upper, is_basic, lo, hi, cost2, n + m, max_iter, iters)
    return status, T, beta, basis, at_upper, iters, phase1


def _recover_x(A, b, lb, ub, basis, at_upper):
    """Recompute the primal point from the final basis with a fresh solve."""
    m, n = A.shape
    N = len(at_upper)
    full = np.zeros((m, N))
    full[:, :n] = A
    full[:, n:n + m] = np.eye(m)
    art_rows = np.flatnonzero(b - A @ lb < 0.0) if m else np.zeros(0, dtype=int)
    full[art_rows, n + m + np.arange(len(art_rows))] = -1.0
    lo = np.zeros(N)
    hi = np.full(N, np.inf)
    lo[:n] = lb
    hi[:n] = ub
    hi[n + m:] = 0.0
    values = np.where(at_upper, hi, lo)
    values[basis] = 0.0
    if m:
        values[basis] = np.linalg.solve(full[:, basis], b - full @ values)
    return np.clip(values[:n], lb, ub)


def solve_lp_arrays(A, b, c, lb, ub, iteration_limit: int = 50_000) -> LpResult:
    """Solve ``min c x  s.t.  A x <= b, lb <= x <= ub`` from dense arrays."""
    A = np.ascontiguousarray(A, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    lb = np.ascontiguousarray(lb, dtype=float)
    ub = np.ascontiguousarray(ub, dtype=float)
    if A.ndim != 2:
        A = A.reshape(0, len(c))
    if np.any(~np.isfinite(lb)):
        raise ValueError("solve_lp requires finite lower bounds")
    if np.any(lb > ub):
        return LpResult(LpStatus.INFEASIBLE, phase1_objective=float(np.max(lb - ub)))
    code, _, beta, basis, at_upper, iters, phase1 = _simplex(A, b, c, lb, ub, int(iteration_limit))
    status = _STATUS[int(code)]
    if status is not LpStatus.OPTIMAL:
        return LpResult(status, iterations=int(iters), phase1_objective=float(phase1))
    x = _recover_x(A, b, lb, ub, basis, at_upper)
    return LpResult(status, x=x, objective=float(c @ x), iterations=int(iters), phase1_objective=float(phase1))


def solve_lp(inst: MipInstance, iteration_limit: int = 50_000) -> LpResult:
    """LP relaxation of ``inst`` (integrality dropped)."""
    if iteration_limit < 1:
        raise ValueError("iteration_limit must be positive")
    return solve_lp_arrays(inst.A, inst.b, inst.objective, inst.lb, inst.ub, iteration_limit)


def lp_feasible(A, b, lb, ub, x, tol: float = FEAS_TOL) -> bool:
    return bool(np.all(x >= lb - tol) and np.all(x <= ub + tol) and (len(b) == 0 or np.all(A @ x <= b + tol)))
