import itertools

import numpy as np
import pytest

from lnsforge.mip import Constraint, MipInstance, Variable


def random_binary_instance(rng, n_vars, n_cons, name="rand", integral=True):
    """Small all-binary instance with mixed-sign coefficients that is feasible at a random point."""
    witness = rng.integers(0, 2, size=n_vars).astype(float)
    variables = tuple(Variable(f"x{i}", obj_coef=float(rng.integers(-10, 11))) for i in range(n_vars))
    constraints = []
    for r in range(n_cons):
        support = rng.choice(n_vars, size=rng.integers(1, n_vars + 1), replace=False)
        coefs = rng.integers(-5, 6, size=len(support)).astype(float)
        if not integral:
            coefs = coefs + rng.random(len(support)).round(3)
        lhs = float(coefs @ witness[support])
        slack = float(rng.integers(0, 4))
        terms = tuple((int(i), float(a)) for i, a in zip(support, coefs) if a != 0.0)
        if terms:
            constraints.append(Constraint(f"c{r}", terms, lhs + slack))
    return MipInstance(name, variables, tuple(constraints)), witness


def all_binary_points(n):
    return np.array(list(itertools.product((0.0, 1.0), repeat=n)))


def brute_force_min(inst, points=None):
    """Best objective and point over every feasible 0/1 vector (all variables binary)."""
    pts = all_binary_points(inst.n_vars) if points is None else points
    ok = np.all(pts @ inst.A.T <= inst.b + 1e-9, axis=1) if inst.n_cons else np.ones(len(pts), bool)
    if not ok.any():
        return None, None
    vals = pts[ok] @ inst.objective
    k = int(np.argmin(vals))
    return float(vals[k]), pts[ok][k]


def knapsack_instance():
    weights = [12, 7, 11, 8, 9, 5, 14, 6, 10, 4]
    values = [24, 13, 23, 15, 16, 9, 29, 10, 19, 7]
    variables = tuple(Variable(f"item{i}", obj_coef=-float(v)) for i, v in enumerate(values))
    cap = Constraint("cap", tuple((i, float(w)) for i, w in enumerate(weights)), 40.0)
    return MipInstance("knapsack10", variables, (cap,))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def knapsack():
    return knapsack_instance()


def vertex_enumeration_lp(A, b, c, lb, ub):
    """Minimum of c @ x over {Ax <= b, lb <= x <= ub} by trying every basis of active rows.

    Returns None when the polytope is empty. Bounds must be finite.
    """
    n = len(c)
    G = np.vstack([A.reshape(-1, n), -np.eye(n), np.eye(n)])
    h = np.concatenate([b, -lb, ub])
    combos = itertools.combinations(range(len(G)), n)
    best = None
    while True:
        chunk = np.array(list(itertools.islice(combos, 20000)), dtype=np.int64)
        if not len(chunk):
            return best
        M = G[chunk]
        ok = np.abs(np.linalg.det(M)) > 1e-10
        X = np.linalg.solve(M[ok], h[chunk[ok]][..., None])[..., 0]
        X = X[np.all(X @ G.T <= h + 1e-9, axis=1)]
        if len(X):
            val = float(np.min(X @ c))
            best = val if best is None else min(best, val)


def permute_instance(inst, var_perm, con_perm=None):
    """Relabel so that new variable k is old variable var_perm[k] (constraints likewise)."""
    inv = np.empty(len(var_perm), dtype=np.int64)
    inv[var_perm] = np.arange(len(var_perm))
    variables = tuple(inst.variables[i] for i in var_perm)
    cons = inst.constraints if con_perm is None else tuple(inst.constraints[r] for r in con_perm)
    cons = tuple(Constraint(c.name, tuple(sorted((int(inv[i]), a) for i, a in c.terms)), c.rhs) for c in cons)
    return MipInstance(inst.name, variables, cons)


def finite_difference_report(params, batch, h=1e-5):
    """Worst ratio |analytic - numeric| / max(1e-4, 1e-3 |numeric|) over every parameter."""
    from lnsforge.neural import batch_loss, loss_and_grad

    _, grad, _ = loss_and_grad(params, batch)
    analytic = grad.flat()
    theta = params.flat()
    worst = 0.0
    for k in range(len(theta)):
        up, down = theta.copy(), theta.copy()
        up[k] += h
        down[k] -= h
        numeric = (batch_loss(params.with_flat(up), batch) - batch_loss(params.with_flat(down), batch)) / (2 * h)
        worst = max(worst, abs(analytic[k] - numeric) / max(1e-4, 1e-3 * abs(numeric)))
    return worst


def exact_inclusion(weights, eta):
    """Inclusion probability of each index under sequential weighted draws, by enumerating orderings."""
    w = np.asarray(weights, dtype=float)
    incl = np.zeros(len(w))
    for seq in itertools.permutations(range(len(w)), eta):
        p, left = 1.0, w.sum()
        for k in seq:
            p *= w[k] / left
            left -= w[k]
        incl[list(seq)] += p
    return incl


ACCEPTANCE_RESULTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[k])
