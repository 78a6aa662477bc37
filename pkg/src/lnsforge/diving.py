"""Neural-Diving style initial assignments.

A policy network without history features predicts, per integer variable,
the probability that it takes value 1. Sampled values are ranked by the
probability of the drawn label; the most confident fraction is fixed and the
remaining sub-MIP is completed by branch-and-bound. The best completion
across samples is returned.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bnb import SolveBudget, solve_mip
from .errors import NoInitialAssignmentError, PreconditionError
from .graph import encode
from .lp import LpStatus, solve_lp
from .mip import MipInstance, check_feasibility, fix_variables, FixingInfeasible
from .neural import PolicyParams, Sample, TrainConfig, TrainLog, policy_forward, train

log = logging.getLogger(__name__)


def complete_integer_assignment(inst: MipInstance, x_int) -> tuple[float, np.ndarray | None]:
    """Substitute integer values and solve the LP over the continuous variables.

    Returns ``(energy, x)``; energy is ``inf`` (and ``x`` None) when the
    values violate bounds or leave the continuous LP infeasible.
    """
    idx = inst.integer_indices
    x_int = np.asarray(x_int, dtype=float)
    if x_int.shape != (len(idx),):
        raise ValueError(f"expected {len(idx)} integer values, got shape {x_int.shape}")
    if np.any(x_int < inst.lb[idx] - 1e-9) or np.any(x_int > inst.ub[idx] + 1e-9):
        return math.inf, None
    x = np.zeros(inst.n_vars)
    x[idx] = x_int
    try:
        sub = fix_variables(inst, inst.continuous_indices, x)
    except FixingInfeasible:
        return math.inf, None
    if sub.instance.n_vars == 0:
        return sub.fixed_offset, x
    lp = solve_lp(sub.instance)
    if lp.status is LpStatus.ITERATION_LIMIT:
        log.warning("LP completion hit the iteration limit on %s; treating as infeasible", inst.name)
        return math.inf, None
    if not lp.optimal:
        return math.inf, None
    x[sub.free_to_parent] = lp.x
    return lp.objective + sub.fixed_offset, x


def diving_energy(inst: MipInstance, x_int) -> float:
    """Objective after LP completion of the continuous part, ``inf`` if infeasible."""
    return complete_integer_assignment(inst, x_int)[0]


def diving_samples(inst: MipInstance, targets: Sequence, lp_solution=None) -> list[Sample]:
    graph = encode(inst, lp_solution, None, window=0)
    samples = []
    for k, x_int in enumerate(targets):
        if not math.isfinite(diving_energy(inst, x_int)):
            raise PreconditionError(f"training assignment {k} for {inst.name!r} is infeasible")
        samples.append(Sample(graph, inst.integer_indices, np.asarray(x_int, dtype=float), f"{inst.name}#{k}"))
    return samples


def train_diving(dataset, config: TrainConfig = TrainConfig(), valid=(), lp_solutions=None) -> tuple[PolicyParams, TrainLog]:
    """Fit the diving model to feasible integer assignments.

    ``dataset`` is a sequence of ``(instance, [x_int, ...])`` pairs.
    """
    lp_solutions = lp_solutions or {}
    samples = [s for inst, targets in dataset for s in diving_samples(inst, targets, lp_solutions.get(inst.name))]
    valid_samples = [s for inst, targets in valid for s in diving_samples(inst, targets, lp_solutions.get(inst.name))]
    return train(samples, config, valid_samples)


@dataclass
class DivingSample:
    index: int
    partial: dict[int, int]
    confidence: dict[int, float]
    completed: np.ndarray | None = None
    objective: float | None = None
    status: str = ""


@dataclass
class DiveResult:
    best: np.ndarray
    objective: float
    samples: list[DivingSample] = field(default_factory=list)
    used_fallback: bool = False
    best_index: int | None = None


def predict_values(params: PolicyParams, inst: MipInstance, lp_solution=None) -> np.ndarray:
    if params.window != 0:
        raise PreconditionError("diving expects a policy trained without history features")
    graph = encode(inst, lp_solution, None, window=0)
    return policy_forward(params, graph, inst.integer_indices).mu


def _complete_sample(inst: MipInstance, mu: np.ndarray, coverage: float, budget: SolveBudget, seed: int, k: int) -> DivingSample:
    idx = inst.integer_indices
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), int(k)]))
    values = (rng.random(len(idx)) < mu).astype(float)
    confidence = np.where(values == 1.0, mu, 1.0 - mu)
    n_fix = min(len(idx), math.ceil(coverage * len(idx)))
    chosen = np.sort(np.argsort(-confidence, kind="stable")[:n_fix])
    sample = DivingSample(
        k,
        {int(idx[p]): int(values[p]) for p in chosen},
        {int(idx[p]): float(confidence[p]) for p in chosen},
    )
    x = np.zeros(inst.n_vars)
    x[idx[chosen]] = values[chosen]
    fixed = np.zeros(inst.n_vars, dtype=bool)
    fixed[idx[chosen]] = True
    try:
        sub = fix_variables(inst, np.flatnonzero(~fixed), x)
    except FixingInfeasible:
        sample.status = "FixingInfeasible"
        return sample
    if sub.instance.n_vars == 0:
        sample.status = "Optimal"
        res_x = x
    else:
        res = solve_mip(sub.instance, budget)
        sample.status = res.status.value
        if res.incumbent is None:
            return sample
        res_x = x.copy()
        res_x[sub.free_to_parent] = res.incumbent
    if check_feasibility(inst, res_x).feasible:
        sample.completed = res_x
        sample.objective = float(inst.objective @ res_x)
    return sample


def dive(
    inst: MipInstance,
    params: PolicyParams,
    n_samples: int = 4,
    coverage: float = 0.5,
    budget: SolveBudget = SolveBudget(max_nodes=2000),
    seed: int = 0,
    lp_solution=None,
    sample_ids: Sequence[int] | None = None,
    workers: int = 1,
) -> DiveResult:
    """Best completed assignment over ``n_samples`` partial assignments.

    Sample ``k`` draws from a generator seeded by ``(seed, k)``, so the
    samples of a smaller run are a prefix of a larger one. ``sample_ids``
    selects a subset of sample indices (used to split samples across
    parallel runs). Falls back to a plain solve when no sample completes.
    """
    if not 0.0 <= coverage <= 1.0:
        raise ValueError("coverage must be in [0, 1]")
    ids = list(range(n_samples)) if sample_ids is None else [int(k) for k in sample_ids]
    mu = predict_values(params, inst, lp_solution)
    if workers > 1 and len(ids) > 1:
        with ProcessPoolExecutor(workers) as pool:
            samples = list(pool.map(_complete_sample, *zip(*[(inst, mu, coverage, budget, seed, k) for k in ids])))
    else:
        samples = [_complete_sample(inst, mu, coverage, budget, seed, k) for k in ids]
    best = None
    for s in samples:
        if s.completed is not None and (best is None or s.objective < best.objective):
            best = s
    if best is not None:
        return DiveResult(best.completed, best.objective, samples, False, best.index)
    res = solve_mip(inst, budget)
    if res.incumbent is None:
        raise NoInitialAssignmentError(f"no diving sample completed and fallback solve returned {res.status.value} on {inst.name!r}")
    return DiveResult(res.incumbent, float(res.objective), samples, True, None)
