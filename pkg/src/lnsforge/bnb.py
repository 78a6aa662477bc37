"""Best-bound branch-and-bound over the simplex LP relaxation."""
from __future__ import annotations

import enum
import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, PreconditionError
from .lp import LpStatus, solve_lp_arrays
from .mip import FEAS_TOL, MipInstance, check_feasibility

IMPROVE_TOL = 1e-9


@dataclass(frozen=True)
class SolveBudget:
    max_nodes: int = 1_000_000
    max_time_ms: int = 10**12
    gap_tol: float = 0.0

    def __post_init__(self):
        if self.max_nodes < 1 or self.max_time_ms < 1:
            raise ValueError("budget limits must be positive")
        if not 0.0 <= self.gap_tol < 1.0:
            raise ValueError("gap_tol must be in [0, 1)")


class MipStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    FEASIBLE_BUDGET_EXHAUSTED = "FeasibleBudgetExhausted"
    INFEASIBLE = "Infeasible"
    NO_SOLUTION_BUDGET_EXHAUSTED = "NoSolutionBudgetExhausted"

    @property
    def budget_exhausted(self) -> bool:
        return self in (MipStatus.FEASIBLE_BUDGET_EXHAUSTED, MipStatus.NO_SOLUTION_BUDGET_EXHAUSTED)


@dataclass
class MipSolveResult:
    status: MipStatus
    incumbent: np.ndarray | None
    objective: float | None
    lower_bound: float
    nodes_expanded: int
    bound_trace: list[float] = field(default_factory=list, repr=False)

    @property
    def has_solution(self) -> bool:
        return self.incumbent is not None


def solve_mip(
    inst: MipInstance,
    budget: SolveBudget = SolveBudget(),
    warm_start=None,
    stop_at_first_incumbent: bool = False,
    lp_iteration_limit: int = 100_000,
) -> MipSolveResult:
    """Solve ``inst`` exactly (up to ``budget.gap_tol``) by branch-and-bound.

    Nodes are expanded best-bound first and branched on the most fractional
    integer variable, lowest index first on ties. ``warm_start`` is installed
    as the initial incumbent. With ``stop_at_first_incumbent`` the search
    returns as soon as the tree produces its first incumbent.
    """
    A, b, c = inst.A, inst.b, inst.objective
    int_idx = inst.integer_indices
    start = time.perf_counter()

    incumbent = None
    inc_obj = math.inf
    if warm_start is not None:
        warm_start = np.asarray(warm_start, dtype=float)
        report = check_feasibility(inst, warm_start)
        if not report.feasible:
            raise PreconditionError(f"warm start is not integral-feasible: {report}")
        incumbent = warm_start.copy()
        incumbent[int_idx] = np.round(incumbent[int_idx])
        inc_obj = float(c @ incumbent)

    def cutoff() -> float:
        if incumbent is None:
            return math.inf
        return inc_obj - max(IMPROVE_TOL, budget.gap_tol * max(abs(inc_obj), 1e-9))

    heap: list[tuple[float, int, np.ndarray, np.ndarray]] = [(-math.inf, 0, inst.lb.copy(), inst.ub.copy())]
    counter = 1
    nodes = 0
    lower_bound = -math.inf
    trace: list[float] = []
    found_new = False
    pruned_bound = math.inf

    while heap:
        if heap[0][0] >= cutoff():
            pruned_bound = heap[0][0]
            heap.clear()
            break
        if nodes >= budget.max_nodes or (time.perf_counter() - start) * 1e3 >= budget.max_time_ms:
            break
        if stop_at_first_incumbent and found_new:
            break
        bound, _, lo, hi = heapq.heappop(heap)
        lower_bound = max(lower_bound, bound)
        nodes += 1
        lp = solve_lp_arrays(A, b, c, lo, hi, lp_iteration_limit)
        trace.append(lower_bound)
        if lp.status is LpStatus.INFEASIBLE:
            continue
        if lp.status is not LpStatus.OPTIMAL:
            raise ConsistencyError(f"node LP ended with status {lp.status.value} on {inst.name!r}")
        if lp.objective >= cutoff():
            continue
        x = lp.x
        if len(int_idx):
            vals = x[int_idx]
            frac = np.abs(vals - np.round(vals))
        else:
            frac = np.zeros(0)
        if not np.any(frac > FEAS_TOL):
            cand = x.copy()
            cand[int_idx] = np.round(cand[int_idx])
            if not check_feasibility(inst, cand).feasible:
                # rounding broke a row: re-solve the continuous part with integers fixed
                fixed_lo, fixed_hi = lo.copy(), hi.copy()
                fixed_lo[int_idx] = fixed_hi[int_idx] = cand[int_idx]
                again = solve_lp_arrays(A, b, c, fixed_lo, fixed_hi, lp_iteration_limit)
                if not again.optimal:
                    continue
                cand = again.x
                cand[int_idx] = np.round(cand[int_idx])
                if not check_feasibility(inst, cand).feasible:
                    continue
            obj = float(c @ cand)
            if obj < inc_obj - IMPROVE_TOL:
                incumbent, inc_obj = cand, obj
                found_new = True
            continue
        # most fractional variable; argmax keeps the lowest index on ties
        j = int(int_idx[int(np.argmax(frac))])
        down_hi = hi.copy()
        down_hi[j] = math.floor(x[j])
        up_lo = lo.copy()
        up_lo[j] = math.ceil(x[j])
        heapq.heappush(heap, (lp.objective, counter, lo, down_hi))
        heapq.heappush(heap, (lp.objective, counter + 1, up_lo, hi))
        counter += 2

    open_bound = heap[0][0] if heap else pruned_bound
    exhausted = open_bound < cutoff()
    if incumbent is None:
        if exhausted:
            return MipSolveResult(MipStatus.NO_SOLUTION_BUDGET_EXHAUSTED, None, None, max(lower_bound, open_bound), nodes, trace)
        return MipSolveResult(MipStatus.INFEASIBLE, None, None, math.inf, nodes, trace)
    bound = min(inc_obj, max(lower_bound, open_bound))
    status = MipStatus.FEASIBLE_BUDGET_EXHAUSTED if exhausted else MipStatus.OPTIMAL
    return MipSolveResult(status, incumbent, inc_obj, bound, nodes, trace)
