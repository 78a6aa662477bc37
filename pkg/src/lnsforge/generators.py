"""Seeded generators for small binary MIP families and dataset manifests."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GenerationError
from .mip import MipInstance, check_feasibility, dumps_instance, load_instance

FAMILIES = ("SetCover", "CombinatorialAuction", "GeneralizedAssignment")
_SHORT = {"SetCover": "setcover", "CombinatorialAuction": "cauction", "GeneralizedAssignment": "gap"}
MAX_RETRIES = 100


@dataclass(frozen=True)
class GeneratorConfig:
    family: str = "SetCover"
    n_vars: int = 40
    n_cons: int = 25
    density: float = 0.15
    seed: int = 0
    count: int = 10
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)

    def __post_init__(self):
        object.__setattr__(self, "split", tuple(float(f) for f in self.split))
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.n_vars < 4:
            raise ValueError("n_vars must be at least 4")
        if self.n_cons < 1:
            raise ValueError("n_cons must be positive")
        if not 0.0 < self.density <= 1.0:
            raise ValueError("density must be in (0, 1]")
        if self.count < 1:
            raise ValueError("count must be at least 1")
        if len(self.split) != 3 or any(f < 0 for f in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split fractions must be three non-negative numbers summing to 1")


def instance_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), int(index)]))


def _var(name, cost):
    return {"name": name, "lb": 0.0, "ub": 1.0, "is_integer": True, "obj_coef": float(cost)}


def _set_cover(rng, n_sets, n_elems, density):
    """Rows are elements, columns are sets; every element gets at least two covering sets."""
    cover = rng.random((n_elems, n_sets)) < density
    for e in range(n_elems):
        need = 2 - int(cover[e].sum())
        if need > 0:
            cover[e, rng.choice(np.flatnonzero(~cover[e]), size=need, replace=False)] = True
    costs = rng.integers(1, 101, size=n_sets)
    variables = [_var(f"s{j}", costs[j]) for j in range(n_sets)]
    constraints = [
        {"name": f"cover{e}", "terms": [[int(j), 1.0] for j in np.flatnonzero(cover[e])], "sense": "ge", "rhs": 1.0}
        for e in range(n_elems)
    ]
    return variables, constraints, np.ones(n_sets)


def _auction(rng, n_bids, n_items, density):
    """Bids on bundles of items; each item sold at most once. Revenue is negated."""
    contains = rng.random((n_bids, n_items)) < density
    for i in range(n_bids):
        if not contains[i].any():
            contains[i, rng.integers(n_items)] = True
    for k in range(n_items):
        if not contains[:, k].any():
            contains[rng.integers(n_bids), k] = True
    values = rng.integers(5, 31, size=n_items)
    prices = [int(values[contains[i]].sum() * rng.uniform(0.8, 1.3)) + 1 for i in range(n_bids)]
    variables = [_var(f"bid{i}", -prices[i]) for i in range(n_bids)]
    constraints = [
        {"name": f"item{k}", "terms": [[int(i), 1.0] for i in np.flatnonzero(contains[:, k])], "sense": "le", "rhs": 1.0}
        for k in range(n_items)
    ]
    return variables, constraints, np.zeros(n_bids)


def _assignment(rng, n_vars, n_jobs, density):
    """Jobs assigned to exactly one agent under agent capacities.

    ``n_vars`` is rounded down to ``n_agents * n_jobs`` with
    ``n_agents = max(2, n_vars // n_jobs)``; ``density`` is unused.
    """
    n_agents = max(2, n_vars // n_jobs)
    cost = rng.integers(10, 51, size=(n_agents, n_jobs))
    weight = rng.integers(5, 26, size=(n_agents, n_jobs))
    owner = rng.integers(n_agents, size=n_jobs)
    witness = np.zeros((n_agents, n_jobs))
    witness[owner, np.arange(n_jobs)] = 1.0
    load = (weight * witness).sum(axis=1)
    capacity = np.maximum(load, np.floor(0.8 * weight.sum(axis=1) / n_agents))

    def idx(a, j):
        return a * n_jobs + j

    variables = [_var(f"x{a}_{j}", cost[a, j]) for a in range(n_agents) for j in range(n_jobs)]
    constraints = [
        {"name": f"job{j}", "terms": [[idx(a, j), 1.0] for a in range(n_agents)], "sense": "eq", "rhs": 1.0}
        for j in range(n_jobs)
    ]
    constraints += [
        {"name": f"cap{a}", "terms": [[idx(a, j), float(weight[a, j])] for j in range(n_jobs)], "sense": "le", "rhs": float(capacity[a])}
        for a in range(n_agents)
    ]
    return variables, constraints, witness.reshape(-1)


_BUILDERS = {"SetCover": _set_cover, "CombinatorialAuction": _auction, "GeneralizedAssignment": _assignment}


def generate_one(config: GeneratorConfig, index: int) -> MipInstance:
    rng = instance_rng(config.seed, index)
    name = f"{_SHORT[config.family]}-s{config.seed}-i{index:04d}"
    for _ in range(MAX_RETRIES):
        variables, constraints, witness = _BUILDERS[config.family](rng, config.n_vars, config.n_cons, config.density)
        inst = MipInstance.from_dict({"name": name, "objective_sense": "min", "variables": variables, "constraints": constraints})
        if check_feasibility(inst, witness).feasible:
            return inst
    raise GenerationError(f"could not build a feasible {config.family} instance after {MAX_RETRIES} attempts")


def generate(config: GeneratorConfig) -> list[MipInstance]:
    return [generate_one(config, k) for k in range(config.count)]


def split_instances(instances: list[MipInstance], fractions=(0.7, 0.15, 0.15), seed: int = 0) -> dict[str, list[MipInstance]]:
    """Shuffle deterministically and cut into train/valid/test by rounded fractions."""
    n = len(instances)
    order = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), 2**32])).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_valid = min(n - n_train, int(round(fractions[1] * n)))
    cuts = {"train": order[:n_train], "valid": order[n_train:n_train + n_valid], "test": order[n_train + n_valid:]}
    return {k: [instances[i] for i in sorted(v)] for k, v in cuts.items()}


def write_dataset(config: GeneratorConfig, out_dir) -> dict:
    """Generate, split and write one JSON file per instance plus ``manifest.json``."""
    out = Path(out_dir)
    splits = split_instances(generate(config), config.split, config.seed)
    manifest = {"family": config.family, "seed": config.seed, "config": dataclasses.asdict(config), "splits": {}}
    for split, items in splits.items():
        (out / split).mkdir(parents=True, exist_ok=True)
        files = []
        for inst in items:
            rel = f"{split}/{inst.name}.json"
            (out / rel).write_text(dumps_instance(inst), encoding="utf-8")
            files.append(rel)
        manifest["splits"][split] = files
    manifest["config"]["split"] = list(config.split)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return manifest


def load_split(data_dir, split: str) -> list[MipInstance]:
    data_dir = Path(data_dir)
    manifest = json.loads((data_dir / "manifest.json").read_text(encoding="utf-8"))
    if split not in manifest["splits"]:
        raise KeyError(f"split {split!r} not in manifest {data_dir / 'manifest.json'}")
    return [load_instance(data_dir / rel) for rel in manifest["splits"][split]]

