import math

import numpy as np
import pytest
from scipy.optimize import linprog

from conftest import all_binary_points
from lnsforge.bnb import SolveBudget, solve_mip
from lnsforge.diving import complete_integer_assignment, dive, diving_energy, predict_values, train_diving
from lnsforge.errors import PreconditionError
from lnsforge.generators import GeneratorConfig, generate
from lnsforge.lp import solve_lp
from lnsforge.mip import Constraint, MipInstance, Variable, check_feasibility
from lnsforge.neural import TrainConfig, init_policy

SMALL = TrainConfig(epochs=40, hidden=16, mlp_hidden=16)


def mixed_instance(seed, n_bin=8, n_cont=4, n_cons=6):
    rng = np.random.default_rng(seed)
    variables = [Variable(f"b{i}", obj_coef=float(rng.integers(-6, 7))) for i in range(n_bin)]
    variables += [Variable(f"y{j}", 0.0, 5.0, False, round(float(rng.normal()), 2)) for j in range(n_cont)]
    cons = []
    for r in range(n_cons):
        row = rng.normal(size=n_bin + n_cont).round(2)
        row[rng.random(n_bin + n_cont) < 0.3] = 0.0
        terms = tuple((i, float(a)) for i, a in enumerate(row) if a != 0.0)
        if terms:
            cons.append(Constraint(f"c{r}", terms, float(rng.uniform(0.5, 3.0))))
    return MipInstance(f"mixed{seed}", tuple(variables), tuple(cons))


def linprog_completion(inst, x_int):
    idx, cont = inst.integer_indices, inst.continuous_indices
    A, b, c = inst.A, inst.b, inst.objective
    rhs = b - A[:, idx] @ x_int
    res = linprog(c[cont], A_ub=A[:, cont], b_ub=rhs, bounds=list(zip(inst.lb[cont], inst.ub[cont])), method="highs")
    if res.status == 2:
        return math.inf
    assert res.status == 0
    return float(c[idx] @ x_int + res.fun)


class TestEnergy:
    def test_pure_integer_is_objective(self, knapsack):
        x = np.array([1, 0, 1, 0, 0, 0, 1, 0, 0, 0], float)
        assert diving_energy(knapsack, x) == float(knapsack.objective @ x)

    def test_violated_integer_row_is_infinite(self, knapsack):
        assert diving_energy(knapsack, np.ones(10)) == math.inf

    def test_out_of_bounds_is_infinite(self, knapsack):
        x = np.zeros(10)
        x[0] = 2.0
        assert diving_energy(knapsack, x) == math.inf

    def test_wrong_length(self, knapsack):
        with pytest.raises(ValueError):
            diving_energy(knapsack, np.zeros(3))

    @pytest.mark.parametrize("seed", range(4))
    def test_mixed_matches_lp_completion_oracle(self, seed):
        inst = mixed_instance(seed)
        relax = solve_lp(inst).objective
        finite = 0
        for x_int in all_binary_points(8):
            expected = linprog_completion(inst, x_int)
            energy, x = complete_integer_assignment(inst, x_int)
            if expected == math.inf:
                assert energy == math.inf and x is None
                continue
            finite += 1
            assert energy == pytest.approx(expected, abs=1e-6)
            assert check_feasibility(inst, x).feasible
            assert energy >= relax - 1e-9
        assert finite > 0


def test_dataset_rejects_infeasible_target(knapsack):
    with pytest.raises(PreconditionError):
        train_diving([(knapsack, [np.ones(10)])], SMALL)


def test_always_on_variable_learned():
    # the model only sees features, so the always-on variable carries a distinctive cost
    rng = np.random.default_rng(2)
    data = []
    for k in range(6):
        costs = rng.integers(1, 10, size=8).astype(float)
        costs[3] = -10.0
        inst = MipInstance(f"free{k}", tuple(Variable(f"x{i}", obj_coef=c) for i, c in enumerate(costs)), ())
        target = rng.integers(0, 2, size=8).astype(float)
        target[3] = 1.0
        data.append((inst, [target]))
    params, _ = train_diving(data, TrainConfig(epochs=150, hidden=16, mlp_hidden=16))
    for inst, _ in data:
        assert predict_values(params, inst)[3] > 0.9


def test_zero_learning_rate_keeps_params(knapsack):
    x = np.array([1, 0, 1, 0, 0, 0, 1, 0, 0, 0], float)
    cfg = TrainConfig(epochs=3, lr=0.0, hidden=16, mlp_hidden=16)
    params, _ = train_diving([(knapsack, [x])], cfg)
    start = init_policy(cfg.seed, window=0, hidden=16, n_layers=cfg.n_layers, mlp_hidden=16)
    np.testing.assert_array_equal(params.flat(), start.flat())


def test_held_out_loss_decreases():
    insts = generate(GeneratorConfig("SetCover", 40, 25, 0.15, seed=4, count=12))
    data = [(i, [solve_mip(i).incumbent]) for i in insts]
    _, log = train_diving(data[:9], SMALL, valid=data[9:])
    valid = log.losses("valid")
    assert valid[-1] < valid[0]


@pytest.fixture(scope="module")
def auction_model():
    insts = generate(GeneratorConfig("CombinatorialAuction", 50, 25, 0.12, seed=6, count=10))
    data = [(i, [solve_mip(i).incumbent]) for i in insts[:8]]
    params, _ = train_diving(data, SMALL)
    return params, insts[8:]


class TestDive:
    def test_seeded_output_is_deterministic(self, auction_model):
        params, (inst, _) = auction_model
        a = dive(inst, params, n_samples=2, seed=5)
        b = dive(inst, params, n_samples=2, seed=5)
        np.testing.assert_array_equal(a.best, b.best)
        assert a.objective == b.objective
        assert [s.partial for s in a.samples] == [s.partial for s in b.samples]

    def test_result_feasible_and_partial_respected(self, auction_model):
        params, insts = auction_model
        for inst in insts:
            res = dive(inst, params, n_samples=3, coverage=0.4, seed=1)
            assert check_feasibility(inst, res.best).feasible
            for s in res.samples:
                assert len(s.partial) == math.ceil(0.4 * len(inst.integer_indices))
                assert set(s.partial) <= set(inst.integer_indices.tolist())
                assert all(c >= 0.5 for c in s.confidence.values())
                if s.completed is not None:
                    assert all(s.completed[i] == v for i, v in s.partial.items())

    def test_zero_coverage_is_one_plain_solve(self, auction_model):
        params, (inst, _) = auction_model
        budget = SolveBudget(max_nodes=300)
        res = dive(inst, params, n_samples=1, coverage=0.0, budget=budget)
        plain = solve_mip(inst, budget)
        assert res.samples[0].partial == {}
        np.testing.assert_array_equal(res.best, plain.incumbent)

    def test_best_of_samples_monotone_in_count(self, auction_model):
        params, (inst, other) = auction_model
        for target in (inst, other):
            objs = [dive(target, params, n_samples=k, coverage=0.6, seed=3).objective for k in (1, 2, 4, 8)]
            assert all(b <= a for a, b in zip(objs, objs[1:]))

    def test_sample_ids_select_a_subset(self, auction_model):
        params, (inst, _) = auction_model
        full = dive(inst, params, n_samples=4, coverage=0.6, seed=2)
        part = dive(inst, params, coverage=0.6, seed=2, sample_ids=[1, 3])
        assert [s.partial for s in part.samples] == [full.samples[1].partial, full.samples[3].partial]

    def test_coverage_validated(self, auction_model):
        params, (inst, _) = auction_model
        with pytest.raises(ValueError):
            dive(inst, params, coverage=1.5)

    def test_history_model_rejected(self, knapsack):
        with pytest.raises(PreconditionError):
            dive(knapsack, init_policy(0, window=2, hidden=8, n_layers=1, mlp_hidden=8))

    def test_worker_pool_matches_sequential(self, auction_model):
        params, (inst, _) = auction_model
        seq = dive(inst, params, n_samples=3, coverage=0.5, seed=9)
        par = dive(inst, params, n_samples=3, coverage=0.5, seed=9, workers=2)
        assert seq.objective == par.objective and seq.best_index == par.best_index


def test_set_cover_dive_against_first_incumbent():
    # 150 sets, 100 elements; two 100-node samples against one 200-node first-incumbent search
    insts = generate(GeneratorConfig("SetCover", 150, 100, 0.05, seed=11, count=60))
    data = [(i, [solve_mip(i, SolveBudget(max_nodes=3000)).incumbent]) for i in insts[:40]]
    params, _ = train_diving(data, TrainConfig(epochs=60, hidden=32, mlp_hidden=32, batch_size=8))
    wins = 0
    for inst in insts[40:]:
        d = dive(inst, params, n_samples=2, coverage=0.2, budget=SolveBudget(max_nodes=100), seed=0)
        first = solve_mip(inst, SolveBudget(max_nodes=200), stop_at_first_incumbent=True)
        wins += d.objective <= first.objective + 1e-9
    assert wins >= 12
