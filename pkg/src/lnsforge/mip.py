"""MIP data model: instances, feasibility, sub-MIPs and local branching.

Every instance is stored in the normalized form ``min c^T x  s.t.  Ax <= b,
lb <= x <= ub, x_i integer for i in I``. Assignments are plain float numpy
vectors of length ``n_vars``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConsistencyError,
    DimensionError,
    InvalidActionError,
    InvalidParameterError,
    PreconditionError,
    UnsupportedError,
)

FEAS_TOL = 1e-6


@dataclass(frozen=True)
class Variable:
    name: str
    lb: float = 0.0
    ub: float = 1.0
    is_integer: bool = True
    obj_coef: float = 0.0

    def __post_init__(self):
        if not self.lb <= self.ub:
            raise ValueError(f"variable {self.name!r}: lb {self.lb} > ub {self.ub}")
        if self.is_integer:
            for bound in (self.lb, self.ub):
                if math.isfinite(bound) and bound != math.floor(bound):
                    raise ValueError(f"integer variable {self.name!r} has fractional bound {bound}")

    @property
    def is_binary(self) -> bool:
        return self.is_integer and self.lb == 0.0 and self.ub == 1.0


@dataclass(frozen=True)
class Constraint:
    """A single row ``sum(coef * x[idx]) <= rhs``."""

    name: str
    terms: tuple[tuple[int, float], ...]
    rhs: float

    def __post_init__(self):
        terms = tuple((int(i), float(a)) for i, a in self.terms)
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "rhs", float(self.rhs))
        seen = set()
        for i, a in terms:
            if i in seen:
                raise ValueError(f"constraint {self.name!r}: duplicate variable index {i}")
            if not math.isfinite(a):
                raise ValueError(f"constraint {self.name!r}: non-finite coefficient")
            seen.add(i)


@dataclass(frozen=True)
class MipInstance:
    name: str
    variables: tuple[Variable, ...]
    constraints: tuple[Constraint, ...]

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        n = len(self.variables)
        for con in self.constraints:
            for i, _ in con.terms:
                if not 0 <= i < n:
                    raise ValueError(f"constraint {con.name!r} references variable {i} (n={n})")

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_cons(self) -> int:
        return len(self.constraints)

    @cached_property
    def integer_indices(self) -> np.ndarray:
        return np.array([i for i, v in enumerate(self.variables) if v.is_integer], dtype=np.int64)

    @cached_property
    def continuous_indices(self) -> np.ndarray:
        return np.array([i for i, v in enumerate(self.variables) if not v.is_integer], dtype=np.int64)

    @cached_property
    def objective(self) -> np.ndarray:
        return np.array([v.obj_coef for v in self.variables], dtype=float)

    @cached_property
    def lb(self) -> np.ndarray:
        return np.array([v.lb for v in self.variables], dtype=float)

    @cached_property
    def ub(self) -> np.ndarray:
        return np.array([v.ub for v in self.variables], dtype=float)

    @cached_property
    def is_integer(self) -> np.ndarray:
        return np.array([v.is_integer for v in self.variables], dtype=bool)

    @cached_property
    def A(self) -> np.ndarray:
        A = np.zeros((self.n_cons, self.n_vars))
        for r, con in enumerate(self.constraints):
            for i, a in con.terms:
                A[r, i] = a
        return A

    @cached_property
    def b(self) -> np.ndarray:
        return np.array([con.rhs for con in self.constraints], dtype=float)

    @property
    def all_binary(self) -> bool:
        return all(v.is_binary for v in self.variables if v.is_integer)

    def with_constraints(self, extra: Iterable[Constraint], name: str | None = None) -> "MipInstance":
        return MipInstance(name or self.name, self.variables, self.constraints + tuple(extra))

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "objective_sense": "min",
            "variables": [
                {"name": v.name, "lb": v.lb, "ub": v.ub, "is_integer": v.is_integer, "obj_coef": v.obj_coef}
                for v in self.variables
            ],
            "constraints": [
                {"name": c.name, "terms": [[i, a] for i, a in c.terms], "sense": "le", "rhs": c.rhs}
                for c in self.constraints
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "MipInstance":
        if data.get("objective_sense", "min") != "min":
            raise UnsupportedError("only objective_sense 'min' is supported; negate c for maximization")
        variables = [
            Variable(
                name=v["name"],
                lb=float(v["lb"]),
                ub=float(v["ub"]),
                is_integer=bool(v["is_integer"]),
                obj_coef=float(v.get("obj_coef", 0.0)),
            )
            for v in data["variables"]
        ]
        constraints: list[Constraint] = []
        for c in data["constraints"]:
            terms = [(int(i), float(a)) for i, a in c["terms"]]
            sense = c.get("sense", "le")
            rhs = float(c["rhs"])
            negated = [(i, -a) for i, a in terms]
            if sense == "le":
                constraints.append(Constraint(c["name"], terms, rhs))
            elif sense == "ge":
                constraints.append(Constraint(c["name"], negated, -rhs))
            elif sense == "eq":
                constraints.append(Constraint(c["name"] + "#le", terms, rhs))
                constraints.append(Constraint(c["name"] + "#ge", negated, -rhs))
            else:
                raise ValueError(f"unknown constraint sense {sense!r}")
        return cls(str(data["name"]), tuple(variables), tuple(constraints))


def dumps_instance(inst: MipInstance) -> str:
    return json.dumps(inst.to_dict(), indent=1) + "\n"


def save_instance(inst: MipInstance, path) -> None:
    Path(path).write_text(dumps_instance(inst), encoding="utf-8")


def load_instance(path) -> MipInstance:
    return MipInstance.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- evaluation --------------------------------------------------------


def _check_length(inst: MipInstance, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (inst.n_vars,):
        raise DimensionError(f"assignment has shape {x.shape}, instance {inst.name!r} has {inst.n_vars} variables")
    return x


def evaluate_objective(inst: MipInstance, x) -> float:
    x = _check_length(inst, x)
    return float(inst.objective @ x)


@dataclass
class FeasibilityReport:
    bound_violations: list[tuple[int, float]] = field(default_factory=list)
    constraint_violations: list[tuple[int, float]] = field(default_factory=list)
    integrality_violations: list[tuple[int, float]] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not (self.bound_violations or self.constraint_violations or self.integrality_violations)

    def __bool__(self) -> bool:
        return self.feasible


def check_feasibility(inst: MipInstance, x, tol: float = FEAS_TOL) -> FeasibilityReport:
    """Report every bound, row and integrality violation larger than ``tol``."""
    x = _check_length(inst, x)
    report = FeasibilityReport()
    below = inst.lb - x
    above = x - inst.ub
    for i in np.flatnonzero((below > tol) | (above > tol)):
        report.bound_violations.append((int(i), float(max(below[i], above[i]))))
    if inst.n_cons:
        excess = inst.A @ x - inst.b
        for r in np.flatnonzero(excess > tol):
            report.constraint_violations.append((int(r), float(excess[r])))
    idx = inst.integer_indices
    if len(idx):
        frac = np.abs(x[idx] - np.round(x[idx]))
        for k in np.flatnonzero(frac > tol):
            report.integrality_violations.append((int(idx[k]), float(frac[k])))
    return report


def is_feasible(inst: MipInstance, x, tol: float = FEAS_TOL) -> bool:
    return check_feasibility(inst, x, tol).feasible


# -- sub-MIPs ----------------------------------------------------------


@dataclass(frozen=True)
class SubMip:
    instance: MipInstance
    free_to_parent: np.ndarray
    fixed_offset: float


class FixingInfeasible(Exception):
    """Substituted values leave a constant row that is violated."""

    def __init__(self, constraint: str, slack: float):
        super().__init__(f"constraint {constraint!r} violated by {-slack:g} after fixing")
        self.constraint = constraint
        self.slack = slack


def fix_variables(inst: MipInstance, free: Sequence[int], x, tol: float = FEAS_TOL) -> SubMip:
    """Substitute ``x`` for every variable not in ``free``.

    Rows left without free terms are dropped when satisfied; a violated one
    raises :class:`FixingInfeasible`.
    """
    x = np.asarray(x, dtype=float)
    free = np.array(sorted(set(int(i) for i in free)), dtype=np.int64)
    position = {int(p): k for k, p in enumerate(free)}
    fixed_mask = np.ones(inst.n_vars, dtype=bool)
    fixed_mask[free] = False
    offset = float(inst.objective[fixed_mask] @ x[fixed_mask])

    constraints = []
    for con in inst.constraints:
        terms = []
        rhs = con.rhs
        for i, a in con.terms:
            k = position.get(i)
            if k is None:
                rhs -= a * x[i]
            else:
                terms.append((k, a))
        if terms:
            constraints.append(Constraint(con.name, tuple(terms), rhs))
        elif rhs < -tol:
            raise FixingInfeasible(con.name, rhs)
    variables = tuple(inst.variables[i] for i in free)
    return SubMip(MipInstance(inst.name, variables, tuple(constraints)), free, offset)


def derive_submip(inst: MipInstance, x, unassign: Iterable[int]) -> SubMip:
    """Fix every integer variable outside ``unassign`` to its value in ``x``.

    Continuous variables always stay free.
    """
    x = _check_length(inst, x)
    unassign = set(int(i) for i in unassign)
    for i in unassign:
        if not 0 <= i < inst.n_vars:
            raise InvalidActionError(f"variable index {i} out of range")
        if not inst.variables[i].is_integer:
            raise InvalidActionError(f"variable {i} ({inst.variables[i].name}) is continuous")
    report = check_feasibility(inst, x)
    if not report.feasible:
        raise PreconditionError(f"assignment is infeasible for {inst.name!r}: {report}")
    free = sorted(unassign | set(int(i) for i in inst.continuous_indices))
    try:
        return fix_variables(inst, free, x)
    except FixingInfeasible as exc:
        raise ConsistencyError(str(exc)) from exc


def lift_assignment(sub: SubMip, y, parent_x) -> np.ndarray:
    """Combine a sub-MIP solution with the fixed values of ``parent_x``."""
    y = np.asarray(y, dtype=float)
    report = check_feasibility(sub.instance, y)
    if not report.feasible:
        raise PreconditionError(f"sub-MIP assignment is infeasible: {report}")
    out = np.array(parent_x, dtype=float, copy=True)
    out[sub.free_to_parent] = y
    return out


# -- local branching ---------------------------------------------------


def local_branching_constraint(inst: MipInstance, x, eta: int) -> Constraint:
    """Hamming-ball row around the binary part of ``x`` in ``<=`` form."""
    if not inst.all_binary:
        raise UnsupportedError("local branching requires all integer variables to be binary")
    if int(eta) != eta or eta < 1:
        raise InvalidParameterError(f"eta must be a positive integer, got {eta}")
    x = _check_length(inst, x)
    idx = inst.integer_indices
    vals = x[idx]
    rounded = np.round(vals)
    if np.any(np.abs(vals - rounded) > FEAS_TOL) or np.any((rounded != 0) & (rounded != 1)):
        raise PreconditionError("assignment is not integral on the binary variables")
    ones = int(rounded.sum())
    terms = tuple((int(i), 1.0 if v == 0 else -1.0) for i, v in zip(idx, rounded))
    return Constraint("local_branching", terms, float(eta - ones))


def add_local_branching_constraint(inst: MipInstance, x, eta: int) -> MipInstance:
    return inst.with_constraints([local_branching_constraint(inst, x, eta)])


def hamming(inst: MipInstance, x, y) -> int:
    idx = inst.integer_indices
    return int(np.sum(np.round(np.asarray(x)[idx]) != np.round(np.asarray(y)[idx])))
