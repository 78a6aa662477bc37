"""Large neighborhood search episodes.

Each step picks a set of integer variables to unassign, solves the sub-MIP
over them (warm-started at the current assignment, so the objective never
gets worse) and adapts the neighborhood size to how the solve went.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .bnb import MipStatus, SolveBudget, solve_mip
from .diving import dive
from .errors import InvalidParameterError, NoInitialAssignmentError
from .evaluation import primal_gap
from .expert import EXPERT_BUDGET, expert_step
from .graph import HistoryWindow, encode
from .lp import solve_lp
from .mip import MipInstance, derive_submip, lift_assignment
from .neural import PolicyParams, policy_forward

RECORD_VERSION = 1


@dataclass(frozen=True)
class SamplerConfig:
    epsilon: float = 0.01
    tau: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidParameterError("epsilon must be positive")
        if not self.tau > 0:
            raise InvalidParameterError("tau must be positive")


@dataclass(frozen=True)
class AdaptiveSizeConfig:
    initial_fraction: float = 0.2
    alpha: float = 1.5
    min_fraction: float = 0.01
    max_fraction: float = 0.5

    def __post_init__(self):
        if not 0 < self.initial_fraction <= 1:
            raise InvalidParameterError("initial_fraction must be in (0, 1]")
        if not self.alpha > 1:
            raise InvalidParameterError("alpha must exceed 1")
        if not self.min_fraction <= self.initial_fraction <= self.max_fraction:
            raise InvalidParameterError("need min_fraction <= initial_fraction <= max_fraction")


def _check_eta(eta: int, n: int) -> int:
    if int(eta) != eta or eta < 0:
        raise InvalidParameterError(f"eta must be a non-negative integer, got {eta}")
    if eta > n:
        raise InvalidParameterError(f"eta={eta} exceeds the {n} integer variables")
    return int(eta)


def selection_weights(mu, cfg: SamplerConfig) -> np.ndarray:
    return (np.asarray(mu, dtype=float) + cfg.epsilon) ** (1.0 / cfg.tau)


def select_neighborhood(mu, eta: int, cfg: SamplerConfig = SamplerConfig(), rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw ``eta`` distinct positions one at a time, weights ``(mu + eps) ** (1 / tau)``.

    Positions index ``mu`` (that is, the integer variables in order). The
    result is sorted.
    """
    mu = np.asarray(mu, dtype=float)
    eta = _check_eta(eta, len(mu))
    if np.any(mu < 0) or np.any(mu > 1):
        raise InvalidParameterError("mu entries must lie in [0, 1]")
    if eta == len(mu):
        return np.arange(len(mu))
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    w = selection_weights(mu, cfg)
    remaining = np.ones(len(mu), dtype=bool)
    picked = []
    for _ in range(eta):
        p = np.where(remaining, w, 0.0)
        k = int(rng.choice(len(mu), p=p / p.sum()))
        picked.append(k)
        remaining[k] = False
    return np.sort(np.array(picked, dtype=np.int64))


def random_neighborhood(candidates, eta: int, seed: int | np.random.Generator = 0) -> np.ndarray:
    """Uniform sample of ``eta`` members of ``candidates`` without replacement."""
    candidates = np.asarray(candidates, dtype=np.int64)
    eta = _check_eta(eta, len(candidates))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return np.sort(rng.choice(candidates, size=eta, replace=False))


def lns_step(inst: MipInstance, x_t, action, budget: SolveBudget) -> tuple[np.ndarray, MipStatus]:
    """Re-optimize the variables in ``action`` (plus all continuous ones) around ``x_t``."""
    x_t = np.asarray(x_t, dtype=float)
    action = [int(i) for i in action]
    if not action:
        return x_t.copy(), MipStatus.OPTIMAL
    sub = derive_submip(inst, x_t, action)
    res = solve_mip(sub.instance, budget, warm_start=x_t[sub.free_to_parent])
    return lift_assignment(sub, res.incumbent, x_t), res.status


def update_fraction(fraction: float, status: MipStatus, cfg: AdaptiveSizeConfig = AdaptiveSizeConfig()) -> float:
    if status is MipStatus.OPTIMAL:
        fraction *= cfg.alpha
    elif status.budget_exhausted:
        fraction /= cfg.alpha
    return min(max(fraction, cfg.min_fraction), cfg.max_fraction)


def neighborhood_size(fraction: float, n_integer: int) -> int:
    return min(n_integer, max(1, math.ceil(fraction * n_integer)))


# -- policies and initializers ------------------------------------------


@dataclass(frozen=True)
class NeuralPolicy:
    params: PolicyParams
    use_lp: bool = True


@dataclass(frozen=True)
class RandomPolicy:
    pass


@dataclass(frozen=True)
class ExpertPolicy:
    budget: SolveBudget = EXPERT_BUDGET


Policy = Union[NeuralPolicy, RandomPolicy, ExpertPolicy]


@dataclass(frozen=True)
class DiveInit:
    params: PolicyParams
    n_samples: int = 4
    coverage: float = 0.5
    budget: SolveBudget = SolveBudget(max_nodes=2000)
    use_lp: bool = True


@dataclass(frozen=True)
class BnbInit:
    budget: SolveBudget = SolveBudget()


Init = Union[DiveInit, BnbInit]


def policy_name(policy: Policy) -> str:
    return {NeuralPolicy: "neural", RandomPolicy: "random", ExpertPolicy: "expert"}[type(policy)]


def init_name(init: Init) -> str:
    return {DiveInit: "dive", BnbInit: "bnb"}[type(init)]


def root_lp(inst: MipInstance) -> np.ndarray | None:
    res = solve_lp(inst)
    return res.x if res.optimal else None


def bnb_incumbent(inst: MipInstance, budget: SolveBudget = SolveBudget()) -> np.ndarray:
    """First incumbent found by branch-and-bound."""
    res = solve_mip(inst, budget, stop_at_first_incumbent=True)
    if res.incumbent is None:
        raise NoInitialAssignmentError(f"branch-and-bound found no assignment for {inst.name!r}: {res.status.value}")
    return res.incumbent


# -- episodes ------------------------------------------------------------


@dataclass
class StepRecord:
    t: int
    eta: int
    action: list[int]
    status: str
    objective: float
    primal_gap: float
    reward: float
    elapsed_ms: float = field(compare=False)
    x: list[float] | None = field(default=None, compare=False)


@dataclass
class EpisodeRecord:
    instance_id: str
    run_seed: int
    policy: str
    init: str
    best_known: float | None
    settings: dict = field(default_factory=dict)
    steps: list[StepRecord] = field(default_factory=list)

    @property
    def final_gap(self) -> float:
        return min(s.primal_gap for s in self.steps)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([s.objective for s in self.steps])

    def to_lines(self) -> list[str]:
        head = {k: v for k, v in asdict(self).items() if k != "steps"}
        head["record_version"] = RECORD_VERSION
        lines = []
        for s in self.steps:
            row = dict(head)
            row.update(asdict(s))
            lines.append(json.dumps(row, sort_keys=True))
        return lines

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "EpisodeRecord":
        rows = [json.loads(line) for line in lines if line.strip()]
        if not rows:
            raise ValueError("empty episode file")
        first = rows[0]
        rec = cls(first["instance_id"], first["run_seed"], first["policy"], first["init"], first["best_known"], first["settings"])
        names = StepRecord.__dataclass_fields__
        rec.steps = [StepRecord(**{k: row[k] for k in names}) for row in rows]
        return rec

    def save(self, out_dir) -> Path:
        path = Path(out_dir) / "episodes" / self.instance_id / f"{self.run_seed}.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(line + "\n" for line in self.to_lines()), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "EpisodeRecord":
        return cls.from_lines(Path(path).read_text(encoding="utf-8").splitlines())


def load_episodes(out_dir) -> list[EpisodeRecord]:
    return [EpisodeRecord.load(p) for p in sorted(Path(out_dir).glob("episodes/*/*.jsonl"))]


def _initial(inst: MipInstance, init: Init, seed: int, lp, sample_ids) -> tuple[np.ndarray, str]:
    if isinstance(init, BnbInit):
        return bnb_incumbent(inst, init.budget), "FirstIncumbent"
    result = dive(inst, init.params, init.n_samples, init.coverage, init.budget, seed,
                  lp if init.use_lp else None, sample_ids)
    return result.best, "DiveFallback" if result.used_fallback else "Dive"


def run_episode(
    inst: MipInstance,
    policy: Policy,
    init: Init,
    step_limit: int = 10,
    sub_budget: SolveBudget = SolveBudget(max_nodes=1000),
    seed: int = 0,
    best_known: float | None = None,
    sampler: SamplerConfig | None = None,
    adaptive: AdaptiveSizeConfig = AdaptiveSizeConfig(),
    time_limit_ms: float | None = None,
    proved_optimal: bool = False,
    dive_sample_ids: Sequence[int] | None = None,
    keep_x: bool = True,
) -> EpisodeRecord:
    """Run one LNS episode and record every step.

    Step 0 is the initial assignment. The loop ends after ``step_limit``
    steps, once ``time_limit_ms`` has elapsed, when a sub-MIP covering every
    integer variable is solved to optimality, or when a proved optimal
    ``best_known`` is reached. Without ``best_known`` gaps are measured
    against the best objective seen in the episode.
    """
    sampler = sampler or SamplerConfig(seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), 1]))
    start = time.perf_counter()
    idx = inst.integer_indices
    n_int = len(idx)
    needs_lp = (isinstance(policy, NeuralPolicy) and policy.use_lp) or (isinstance(init, DiveInit) and init.use_lp)
    lp = root_lp(inst) if needs_lp else None

    x, init_status = _initial(inst, init, seed, lp, dive_sample_ids)
    settings = {
        "step_limit": step_limit,
        "sub_budget": asdict(sub_budget),
        "sampler": asdict(sampler),
        "adaptive": asdict(adaptive),
        "time_limit_ms": time_limit_ms,
    }
    rec = EpisodeRecord(inst.name, int(seed), policy_name(policy), init_name(init), best_known, settings)

    def elapsed() -> float:
        return (time.perf_counter() - start) * 1000.0

    raw = [(0, 0, [], init_status, float(inst.objective @ x), elapsed(), x.copy())]
    history = HistoryWindow((), policy.params.window) if isinstance(policy, NeuralPolicy) else None
    fraction = adaptive.initial_fraction
    for t in range(1, step_limit + 1):
        if time_limit_ms is not None and elapsed() >= time_limit_ms:
            break
        if proved_optimal and best_known is not None and raw[-1][4] <= best_known + 1e-9:
            break
        eta = neighborhood_size(fraction, n_int)
        if isinstance(policy, ExpertPolicy):
            step = expert_step(inst, x, eta, policy.budget)
            action = idx[step.action_indices]
            x_next = step.x_next
            status = MipStatus(step.solver_status)
        else:
            if isinstance(policy, RandomPolicy):
                positions = random_neighborhood(np.arange(n_int), eta, rng)
            else:
                history = history.push(x)
                graph = encode(inst, lp if policy.use_lp else None, history, policy.params.window)
                mu = policy_forward(policy.params, graph, idx).mu
                positions = select_neighborhood(mu, eta, sampler, rng)
            action = idx[positions]
            x_next, status = lns_step(inst, x, action, sub_budget)
        x = x_next
        raw.append((t, eta, [int(i) for i in action], status.value, float(inst.objective @ x), elapsed(), x.copy()))
        fraction = update_fraction(fraction, status, adaptive)
        if status is MipStatus.OPTIMAL and eta >= n_int:
            break

    reference = best_known if best_known is not None else min(r[4] for r in raw)
    for t, eta, action, status, obj, ms, xs in raw:
        gap = primal_gap(obj, reference)
        rec.steps.append(StepRecord(t, eta, action, status, obj, gap, -gap, ms, xs.tolist() if keep_x else None))
    return rec


# -- parallel runs -------------------------------------------------------


@dataclass
class ParallelResult:
    records: list[EpisodeRecord]
    curve: np.ndarray  # best objective over runs at each step

    @property
    def final_objective(self) -> float:
        return float(self.curve[-1])


def best_so_far(record: EpisodeRecord, n_points: int | None = None) -> np.ndarray:
    """Running minimum of the objective, padded with its last value."""
    run = np.minimum.accumulate(record.objectives)
    if n_points is not None and n_points > len(run):
        run = np.concatenate([run, np.full(n_points - len(run), run[-1])])
    return run


def aggregate_curve(records: Sequence[EpisodeRecord]) -> np.ndarray:
    n = max(len(r.steps) for r in records)
    return np.min([best_so_far(r, n) for r in records], axis=0)


def _episode_job(args):
    inst, policy, init, kwargs = args
    return run_episode(inst, policy, init, **kwargs)


def run_parallel(
    inst: MipInstance,
    policy: Policy,
    init: Init,
    n_runs: int = 1,
    base_seed: int = 0,
    workers: int = 1,
    **kwargs,
) -> ParallelResult:
    """``n_runs`` independent episodes; the best objective across them wins.

    Run ``k`` uses seed ``base_seed + k``. When initializing by diving, the
    diving samples are dealt out round-robin so that no two runs share one.
    """
    if n_runs < 1:
        raise InvalidParameterError("n_runs must be at least 1")
    jobs = []
    for k in range(n_runs):
        kw = dict(kwargs, seed=base_seed + k)
        if isinstance(init, DiveInit):
            kw["dive_sample_ids"] = [k + j * n_runs for j in range(init.n_samples)]
        jobs.append((inst, policy, init, kw))
    records: list[EpisodeRecord] = []
    failures = []
    if workers > 1 and n_runs > 1:
        with ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(_episode_job, job) for job in jobs]
            for fut in futures:
                try:
                    records.append(fut.result())
                except NoInitialAssignmentError as exc:
                    failures.append(exc)
    else:
        for job in jobs:
            try:
                records.append(_episode_job(job))
            except NoInitialAssignmentError as exc:
                failures.append(exc)
    if not records:
        raise NoInitialAssignmentError(f"all {n_runs} runs failed to initialize on {inst.name!r}: {failures[0]}")
    return ParallelResult(records, aggregate_curve(records))
