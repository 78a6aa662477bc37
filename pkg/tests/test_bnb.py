import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import brute_force_min, random_binary_instance
from lnsforge.bnb import MipStatus, SolveBudget, solve_mip
from lnsforge.errors import PreconditionError
from lnsforge.generators import GeneratorConfig, generate_one
from lnsforge.mip import Constraint, MipInstance, Variable, check_feasibility


def test_knapsack_matches_enumeration(knapsack):
    best, _ = brute_force_min(knapsack)
    res = solve_mip(knapsack)
    assert res.status is MipStatus.OPTIMAL
    assert res.objective == best
    assert check_feasibility(knapsack, res.incumbent).feasible
    assert res.lower_bound == pytest.approx(best)


def test_integral_relaxation_solves_at_root():
    variables = tuple(Variable(f"x{i}", obj_coef=c) for i, c in enumerate([3.0, -1.0, 2.0, -4.0]))
    cons = (Constraint("a", ((0, 1.0), (1, 1.0)), 1.0), Constraint("b", ((2, 1.0), (3, 1.0)), 1.0))
    res = solve_mip(MipInstance("tu", variables, cons))
    assert res.status is MipStatus.OPTIMAL
    assert res.nodes_expanded == 1
    assert res.objective == -5.0


def test_one_node_budget_keeps_warm_start():
    inst = generate_one(GeneratorConfig("CombinatorialAuction", 60, 30, 0.15, seed=3), 0)
    warm = np.zeros(inst.n_vars)
    res = solve_mip(inst, SolveBudget(max_nodes=1), warm_start=warm)
    assert res.status is MipStatus.FEASIBLE_BUDGET_EXHAUSTED
    np.testing.assert_array_equal(res.incumbent, warm)
    assert res.lower_bound <= res.objective


def test_infeasible_is_a_status():
    inst = MipInstance("inf", (Variable("a"), Variable("b")), (Constraint("c", ((0, -1.0), (1, -1.0)), -3.0),))
    res = solve_mip(inst)
    assert res.status is MipStatus.INFEASIBLE
    assert res.incumbent is None and res.objective is None


def test_no_solution_within_budget():
    inst = generate_one(GeneratorConfig("GeneralizedAssignment", 60, 15, seed=5), 0)
    res = solve_mip(inst, SolveBudget(max_nodes=1))
    if res.incumbent is None:
        assert res.status is MipStatus.NO_SOLUTION_BUDGET_EXHAUSTED
    else:
        assert res.status in (MipStatus.OPTIMAL, MipStatus.FEASIBLE_BUDGET_EXHAUSTED)


def test_warm_start_must_be_feasible(knapsack):
    with pytest.raises(PreconditionError):
        solve_mip(knapsack, warm_start=np.ones(10))


def test_budget_validation():
    with pytest.raises(ValueError):
        SolveBudget(max_nodes=0)
    with pytest.raises(ValueError):
        SolveBudget(gap_tol=1.0)


def test_gap_tolerance_respected():
    inst = generate_one(GeneratorConfig("CombinatorialAuction", 80, 40, 0.12, seed=1), 0)
    exact = solve_mip(inst)
    loose = solve_mip(inst, SolveBudget(gap_tol=0.05))
    assert loose.status is MipStatus.OPTIMAL
    assert (loose.objective - loose.lower_bound) / max(abs(loose.objective), 1e-9) <= 0.05 + 1e-12
    assert loose.objective - exact.objective <= 0.05 * abs(loose.objective) + 1e-9
    assert loose.nodes_expanded <= exact.nodes_expanded


def test_first_incumbent_stop():
    inst = generate_one(GeneratorConfig("CombinatorialAuction", 80, 40, 0.12, seed=1), 1)
    first = solve_mip(inst, stop_at_first_incumbent=True)
    full = solve_mip(inst)
    assert first.incumbent is not None
    assert first.objective >= full.objective
    assert first.nodes_expanded <= full.nodes_expanded


def test_bound_trace_monotone_and_deterministic():
    inst = generate_one(GeneratorConfig("CombinatorialAuction", 60, 30, 0.15, seed=2), 0)
    a = solve_mip(inst, SolveBudget(max_nodes=500))
    b = solve_mip(inst, SolveBudget(max_nodes=500))
    assert np.all(np.diff(a.bound_trace) >= 0)
    assert a.objective == b.objective and a.nodes_expanded == b.nodes_expanded
    np.testing.assert_array_equal(a.incumbent, b.incumbent)
    assert a.bound_trace == b.bound_trace


def test_mixed_integer_rounding():
    # binary y switches on a continuous flow x <= 4 y; minimize -x + 3 y
    variables = (Variable("y", obj_coef=3.0), Variable("x", 0.0, 10.0, False, -1.0))
    cons = (Constraint("link", ((1, 1.0), (0, -4.0)), 0.0),)
    res = solve_mip(MipInstance("fc", variables, cons))
    assert res.status is MipStatus.OPTIMAL
    assert res.objective == pytest.approx(-1.0)
    np.testing.assert_allclose(res.incumbent, [1.0, 4.0])


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 10), m=st.integers(0, 6))
def test_random_instances_match_enumeration(seed, n, m):
    rng = np.random.default_rng(seed)
    inst, witness = random_binary_instance(rng, n, m)
    best, _ = brute_force_min(inst)
    res = solve_mip(inst, warm_start=witness if seed % 2 else None)
    assert res.status is MipStatus.OPTIMAL
    assert res.objective == pytest.approx(best, abs=1e-9)
    assert res.lower_bound <= best + 1e-9
    assert res.objective <= float(inst.objective @ witness) + 1e-9
