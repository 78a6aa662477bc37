"""Primal gap, best-known objectives, average-gap and survival curves."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bnb import MipStatus, SolveBudget, solve_mip
from .errors import MissingInstanceError
from .mip import MipInstance

log = logging.getLogger(__name__)

# target gaps used to call an instance solved, per application dataset
THRESHOLD_PRESETS = {
    "neural_network_verification": 0.05,
    "production_packing": 0.01,
    "production_planning": 0.03,
    "electric_grid": 0.0001,
    "miplib": 0.0,
}

PROVED = "bnb-proved-optimal"
INCUMBENT = "best-incumbent-any-method"


def primal_gap(f_xt: float | None, f_star: float) -> float:
    if not math.isfinite(f_star):
        raise ValueError("best known objective must be finite")
    if f_xt is None or not math.isfinite(f_xt) or f_xt * f_star < 0:
        return 1.0
    denom = max(abs(f_xt), abs(f_star))
    if denom == 0.0:
        return 0.0
    return abs(f_xt - f_star) / denom


@dataclass
class BestKnownEntry:
    value: float
    provenance: str
    solution: list[float] | None = None


@dataclass
class BestKnownTable:
    entries: dict[str, BestKnownEntry] = field(default_factory=dict)
    excluded: dict[str, str] = field(default_factory=dict)

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def value(self, name: str) -> float:
        try:
            return self.entries[name].value
        except KeyError:
            raise MissingInstanceError(f"instance {name!r} has no best-known objective") from None

    def proved(self, name: str) -> bool:
        return name in self.entries and self.entries[name].provenance == PROVED

    def to_dict(self) -> dict:
        return {
            "entries": {k: {"value": e.value, "provenance": e.provenance} for k, e in sorted(self.entries.items())},
            "excluded": dict(sorted(self.excluded.items())),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BestKnownTable":
        entries = {k: BestKnownEntry(float(v["value"]), v["provenance"]) for k, v in data["entries"].items()}
        return cls(entries, dict(data.get("excluded", {})))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BestKnownTable":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def refreshed(self, candidates: dict[str, float]) -> "BestKnownTable":
        """Copy with non-proved entries replaced by strictly better objectives."""
        entries = dict(self.entries)
        for name, value in candidates.items():
            old = entries.get(name)
            if old is None or old.provenance == PROVED or value >= old.value - 1e-9:
                continue
            log.warning("best-known for %s improved %g -> %g; gaps computed earlier are stale", name, old.value, value)
            entries[name] = BestKnownEntry(float(value), INCUMBENT)
        return BestKnownTable(entries, dict(self.excluded))


def compute_best_known(instances: Iterable[MipInstance], budget: SolveBudget = SolveBudget(max_nodes=200_000)) -> BestKnownTable:
    table = BestKnownTable()
    for inst in instances:
        res = solve_mip(inst, budget)
        if res.incumbent is None:
            table.excluded[inst.name] = res.status.value
            log.warning("excluding %s from the best-known table: %s", inst.name, res.status.value)
            continue
        provenance = PROVED if res.status is MipStatus.OPTIMAL else INCUMBENT
        table.entries[inst.name] = BestKnownEntry(float(res.objective), provenance, res.incumbent.tolist())
    return table


# -- curves ---------------------------------------------------------------


@dataclass(frozen=True)
class CurvePoint:
    time_or_step: float
    mean_gap: float
    solved_fraction: float
    n_instances: int


def step_grid(max_step: int) -> np.ndarray:
    return np.arange(0, max_step + 1, dtype=float)


def time_grid(t_min_ms: float, t_max_ms: float, n: int = 50) -> np.ndarray:
    return np.geomspace(max(t_min_ms, 1e-3), t_max_ms, n)


def _points(record, mode: str) -> tuple[np.ndarray, np.ndarray]:
    xs = np.array([s.t if mode == "step" else s.elapsed_ms for s in record.steps], dtype=float)
    objs = np.array([s.objective for s in record.steps], dtype=float)
    return xs, objs


def gap_matrix(records: Sequence, table: BestKnownTable, grid: Sequence[float], mode: str = "step") -> tuple[list[str], np.ndarray]:
    """Best-so-far gap per instance (rows) at every grid point (columns).

    Records of the same instance are pooled as parallel runs. Before an
    instance's first recorded point its gap is 1.
    """
    if mode not in ("step", "time"):
        raise ValueError("mode must be 'step' or 'time'")
    grid = np.asarray(grid, dtype=float)
    by_instance: dict[str, list] = {}
    for rec in records:
        by_instance.setdefault(rec.instance_id, []).append(rec)
    names = sorted(by_instance)
    out = np.ones((len(names), len(grid)))
    for row, name in enumerate(names):
        f_star = table.value(name)
        for rec in by_instance[name]:
            xs, objs = _points(rec, mode)
            gaps = np.array([primal_gap(o, f_star) for o in objs])
            running = np.minimum.accumulate(gaps)
            pos = np.searchsorted(xs, grid, side="right") - 1
            have = pos >= 0
            vals = np.ones(len(grid))
            vals[have] = running[pos[have]]
            out[row] = np.minimum(out[row], vals)
    return names, out


def average_gap_curve(records, table: BestKnownTable, grid, mode: str = "step", threshold: float = 0.0) -> list[CurvePoint]:
    names, gaps = gap_matrix(records, table, grid, mode)
    n = len(names)
    mean = gaps.mean(axis=0) if n else np.ones(len(grid))
    solved = (gaps <= threshold).mean(axis=0) if n else np.zeros(len(grid))
    return [CurvePoint(float(g), float(m), float(s), n) for g, m, s in zip(grid, mean, solved)]


def survival_curve(records, table: BestKnownTable, threshold: float, grid, mode: str = "step") -> list[CurvePoint]:
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    return average_gap_curve(records, table, grid, mode, threshold)


def write_gap_csv(points: Sequence[CurvePoint], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["grid_point", "mean_gap", "n"])
        for p in points:
            w.writerow([repr(p.time_or_step), repr(p.mean_gap), p.n_instances])


def write_survival_csv(curves: dict[float, Sequence[CurvePoint]], path) -> None:
    """One block of rows per threshold."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["grid_point", "fraction", "threshold"])
        for threshold, points in curves.items():
            for p in points:
                w.writerow([repr(p.time_or_step), repr(p.solved_fraction), repr(threshold)])


def plot_curves(curves: dict[str, Sequence[CurvePoint]], path, ylabel: str = "average primal gap", log_x: bool = True, field_name: str = "mean_gap") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, pts in curves.items():
        xs = [max(p.time_or_step, 1e-3) if log_x else p.time_or_step for p in pts]
        ax.step(xs, [getattr(p, field_name) for p in pts], where="post", label=label)
    if log_x:
        ax.set_xscale("log")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
