"""Local-branching expert and imitation-learning data.

The expert solves the full MIP restricted to a Hamming ball around the
current assignment; the variables whose values change form its action.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .bnb import MipStatus, SolveBudget, solve_mip
from .errors import InvalidParameterError, NoInitialAssignmentError, PreconditionError, UnsupportedError
from .graph import DEFAULT_WINDOW, HistoryWindow, encode
from .mip import MipInstance, add_local_branching_constraint, check_feasibility
from .neural import PolicyParams, Sample, TrainConfig, TrainLog, train

log = logging.getLogger(__name__)

EXPERT_BUDGET = SolveBudget(max_nodes=50_000)


def default_eta(n_integer: int, fraction: float = 0.2) -> int:
    return max(1, math.ceil(fraction * n_integer))


@dataclass
class ExpertStep:
    x_t: np.ndarray
    a_t: np.ndarray  # 0/1 over the integer variables, 1 = unassign
    x_next: np.ndarray
    eta: int
    solver_status: str
    objective_t: float
    objective_next: float
    stalled: bool = False

    @property
    def action_indices(self) -> np.ndarray:
        return np.flatnonzero(self.a_t)


def expert_step(inst: MipInstance, x_t, eta: int, budget: SolveBudget = EXPERT_BUDGET) -> ExpertStep:
    """Best assignment within Hamming distance ``eta`` of ``x_t``, and the diff."""
    if not inst.all_binary:
        raise UnsupportedError("the expert supports binary integer variables only")
    if eta < 1:
        raise InvalidParameterError("eta must be at least 1")
    x_t = np.asarray(x_t, dtype=float)
    if not check_feasibility(inst, x_t).feasible:
        raise PreconditionError("expert step needs an integral-feasible assignment")
    idx = inst.integer_indices
    obj_t = float(inst.objective @ x_t)
    res = solve_mip(add_local_branching_constraint(inst, x_t, eta), budget, warm_start=x_t)
    improved = res.incumbent is not None and res.objective < obj_t - 1e-9
    if not improved:
        stalled = res.status is not MipStatus.OPTIMAL
        return ExpertStep(x_t.copy(), np.zeros(len(idx)), x_t.copy(), eta, res.status.value, obj_t, obj_t, stalled)
    x_next = res.incumbent
    a_t = (np.round(x_t[idx]) != np.round(x_next[idx])).astype(float)
    return ExpertStep(x_t.copy(), a_t, x_next, eta, res.status.value, obj_t, float(res.objective))


@dataclass
class Trajectory:
    instance_id: str
    steps: list[ExpertStep] = field(default_factory=list)
    initial_source: str = "bnb-incumbent"
    run: int = 0

    def objectives(self) -> list[float]:
        return [self.steps[0].objective_t] + [s.objective_next for s in self.steps] if self.steps else []


def rollout(
    inst: MipInstance,
    x0,
    eta: int,
    T_max: int = 10,
    budget: SolveBudget = EXPERT_BUDGET,
    initial_source: str = "bnb-incumbent",
    run: int = 0,
    optimum: float | None = None,
) -> Trajectory:
    """Apply expert steps from ``x0``.

    Stops after ``T_max`` steps, two consecutive stalled steps, a fixed point
    (optimal ball solve without improvement: every later step would repeat
    it), or when a known proven optimum ``optimum`` is reached.
    """
    traj = Trajectory(inst.name, [], initial_source, run)
    x = np.asarray(x0, dtype=float)
    n_int = len(inst.integer_indices)
    stalls = 0
    for _ in range(T_max):
        step = expert_step(inst, x, min(eta, n_int), budget)
        traj.steps.append(step)
        x = step.x_next
        stalls = stalls + 1 if step.stalled else 0
        if stalls >= 2:
            break
        if step.solver_status == MipStatus.OPTIMAL.value and not step.a_t.any():
            break
        if step.solver_status == MipStatus.OPTIMAL.value and eta >= n_int:
            break
        if optimum is not None and step.objective_next <= optimum + 1e-9:
            break
    return traj


def generate_trajectories(
    instances: Sequence[MipInstance],
    eta_fraction: float = 0.2,
    T_max: int = 10,
    budget: SolveBudget = EXPERT_BUDGET,
    initial: Callable[[MipInstance, int], tuple[np.ndarray, str]] | None = None,
    runs_per_instance: int = 1,
    optima: dict[str, float] | None = None,
) -> list[Trajectory]:
    """Expert trajectories for every instance.

    ``initial(inst, run)`` returns ``(x0, source)``; by default the first
    branch-and-bound incumbent is used. Instances without an initial
    assignment are skipped with a logged reason.
    """
    from .lns import bnb_incumbent

    if initial is None:
        def initial(inst, run):
            return bnb_incumbent(inst), "bnb-incumbent"

    optima = optima or {}
    out = []
    for inst in instances:
        eta = default_eta(len(inst.integer_indices), eta_fraction)
        for run in range(runs_per_instance):
            try:
                x0, source = initial(inst, run)
            except NoInitialAssignmentError as exc:
                log.warning("skipping %s run %d: %s", inst.name, run, exc)
                continue
            out.append(rollout(inst, x0, eta, T_max, budget, source, run, optima.get(inst.name)))
    return out


# -- files -----------------------------------------------------------------


def trajectory_lines(inst: MipInstance, traj: Trajectory) -> list[str]:
    idx = inst.integer_indices
    cont = inst.continuous_indices
    lines = []
    for t, step in enumerate(traj.steps):
        row = {
            "instance": traj.instance_id,
            "traj": traj.run,
            "initial_source": traj.initial_source,
            "step": t,
            "x_t": [int(v) for v in np.round(step.x_t[idx])],
            "a_t": [int(idx[p]) for p in step.action_indices],
            "objective_t": step.objective_t,
            "objective_next": step.objective_next,
            "eta": step.eta,
            "status": step.solver_status,
            "stalled": step.stalled,
        }
        if len(cont):
            row["x_cont_t"] = step.x_t[cont].tolist()
            row["x_cont_next"] = step.x_next[cont].tolist()
        lines.append(json.dumps(row, sort_keys=True))
    return lines


def write_trajectories(inst: MipInstance, trajectories: Sequence[Trajectory], path) -> None:
    """One JSON object per step; ``traj`` distinguishes runs on the same instance."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    lines = [line for traj in trajectories for line in trajectory_lines(inst, traj)]
    tmp.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    tmp.replace(path)


def read_trajectories(inst: MipInstance, path) -> list[Trajectory]:
    idx = inst.integer_indices
    cont = inst.continuous_indices
    runs: dict[int, Trajectory] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        traj = runs.setdefault(row["traj"], Trajectory(row["instance"], [], row["initial_source"], row["traj"]))
        x_t = np.zeros(inst.n_vars)
        x_t[idx] = row["x_t"]
        a_t = np.isin(idx, row["a_t"]).astype(float)
        x_next = x_t.copy()
        x_next[idx] = np.where(a_t == 1.0, 1.0 - x_t[idx], x_t[idx])
        if len(cont):
            x_t[cont] = row["x_cont_t"]
            x_next[cont] = row["x_cont_next"]
        traj.steps.append(ExpertStep(x_t, a_t, x_next, row["eta"], row["status"], row["objective_t"], row["objective_next"], row["stalled"]))
    return [runs[k] for k in sorted(runs)]


# -- imitation training -----------------------------------------------------


def trajectory_samples(inst: MipInstance, traj: Trajectory, lp_solution=None, window: int = DEFAULT_WINDOW) -> list[Sample]:
    """One sample per step; the history window holds x_t and its predecessors."""
    history = HistoryWindow((), window)
    samples = []
    for t, step in enumerate(traj.steps):
        history = history.push(step.x_t)
        graph = encode(inst, lp_solution, history, window)
        samples.append(Sample(graph, inst.integer_indices, step.a_t, f"{inst.name}#r{traj.run}#t{t:04d}"))
    return samples


def train_nns(
    dataset: Sequence[tuple[MipInstance, Sequence[Trajectory]]],
    config: TrainConfig = TrainConfig(),
    valid: Sequence[tuple[MipInstance, Sequence[Trajectory]]] = (),
    lp_solutions: dict[str, np.ndarray] | None = None,
    window: int = DEFAULT_WINDOW,
) -> tuple[PolicyParams, TrainLog]:
    """Imitation-train the neighborhood selection policy on expert steps."""
    lp_solutions = lp_solutions or {}

    def build(pairs):
        return [s for inst, trajs in pairs for traj in trajs for s in trajectory_samples(inst, traj, lp_solutions.get(inst.name), window)]

    return train(build(dataset), config, build(valid))
