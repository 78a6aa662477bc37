import math

import numpy as np
import pytest

from conftest import finite_difference_report, permute_instance, random_binary_instance
from lnsforge.errors import CheckpointError, DimensionError, TrainingError
from lnsforge.graph import BipartiteGraph, HistoryWindow, encode, node_feature_width
from lnsforge.mip import MipInstance, Variable
from lnsforge.neural import (
    Mlp,
    PolicyOutput,
    PolicyParams,
    Sample,
    TrainConfig,
    action_log_prob,
    backward,
    gcn_forward,
    init_policy,
    load_checkpoint,
    logit,
    make_batch,
    mlp_forward,
    nll_loss,
    policy_forward,
    save_checkpoint,
    sigmoid,
    train,
)


def small_params(seed=0, window=1, hidden=8):
    return init_policy(seed, window=window, hidden=hidden, n_layers=2, mlp_hidden=8)


def graph_for(seed, n=10, m=6, window=1):
    rng = np.random.default_rng(seed)
    inst, w = random_binary_instance(rng, n, m)
    return inst, encode(inst, rng.random(n), HistoryWindow(size=window).push(w), window)


def test_identity_layer_on_isolated_nodes():
    inst = MipInstance("free", tuple(Variable(f"x{i}", obj_coef=float(i)) for i in range(4)), ())
    g = encode(inst, window=0)
    d = node_feature_width(0)
    identity = Mlp([np.eye(d)], [np.zeros(d)])
    params = PolicyParams([identity], Mlp([np.zeros((d, 1))], [np.zeros(1)]), 0, d)
    for exact in (True, False):
        np.testing.assert_array_equal(gcn_forward(params, g, exact=exact), g.node_features)


def test_single_layer_against_hand_calculation():
    # one variable in one constraint: 2 nodes, plus a second free variable
    from lnsforge.mip import Constraint

    inst = MipInstance("hand", (Variable("a", obj_coef=2.0), Variable("b", obj_coef=-1.0)), (Constraint("c", ((0, 3.0),), 1.0),))
    g = encode(inst, window=0)
    rng = np.random.default_rng(1)
    d = node_feature_width(0)
    W1, b1 = rng.normal(size=(d, 5)), rng.normal(size=5)
    W2, b2 = rng.normal(size=(5, 3)), rng.normal(size=3)
    params = PolicyParams([Mlp([W1, W2], [b1, b2])], Mlp([np.zeros((3, 1))], [np.zeros(1)]), 0, 3)
    U = g.node_features
    G = np.maximum(U @ W1 + b1, 0) @ W2 + b2
    adj = np.array([[1, 0, 1], [0, 1, 0], [1, 0, 1]], dtype=float)
    np.testing.assert_allclose(gcn_forward(params, g), adj @ G, rtol=0, atol=1e-12)


def test_head_zero_gives_half():
    inst, g = graph_for(0)
    p = small_params()
    head = p.head.zeros_like()
    out = policy_forward(PolicyParams(p.layers, head, p.window, p.hidden), g, inst.integer_indices)
    np.testing.assert_array_equal(out.mu, 0.5)


def test_head_bias_saturates():
    inst, g = graph_for(0)
    p = small_params()
    head = p.head.zeros_like()
    head.biases[-1][:] = 10.0
    out = policy_forward(PolicyParams(p.layers, head, p.window, p.hidden), g, inst.integer_indices)
    assert np.all(out.mu > 0.9999)


def test_action_log_prob_is_product():
    mu = np.array([0.1, 0.7, 0.5, 0.9, 0.33])
    a = np.array([0, 1, 1, 0, 1])
    out = PolicyOutput(logit(mu), mu)
    explicit = 1.0
    for m, ai in zip(mu, a):
        explicit *= m if ai else 1 - m
    assert action_log_prob(out, a) == pytest.approx(math.log(explicit), abs=1e-12)


def test_nll_cases():
    k = 7
    half = PolicyOutput(np.zeros(k), np.full(k, 0.5))
    assert nll_loss([half], [np.ones(k)]) == pytest.approx(k * math.log(2), abs=1e-12)
    a = np.array([1.0, 0.0, 1.0])
    perfect = PolicyOutput(np.array([np.inf, -np.inf, np.inf]), a.copy())
    assert nll_loss([perfect], [a]) == pytest.approx(0.0, abs=1e-11)
    rng = np.random.default_rng(2)
    outs, acts, naive = [], [], 0.0
    for _ in range(3):
        mu = rng.random(6)
        act = rng.integers(0, 2, 6)
        outs.append(PolicyOutput(logit(mu), mu))
        acts.append(act)
        for m, ai in zip(mu, act):
            naive -= math.log(m) if ai else math.log(1 - m)
    assert nll_loss(outs, acts) == pytest.approx(naive, abs=1e-12)
    with pytest.raises(DimensionError):
        nll_loss(outs, acts[:2])
    with pytest.raises(DimensionError):
        nll_loss([outs[0]], [np.ones(2)])


def test_gradient_matches_finite_differences():
    inst, g = graph_for(3, n=10, m=6)
    labels = np.random.default_rng(3).integers(0, 2, 10).astype(float)
    batch = make_batch([Sample(g, inst.integer_indices, labels, "s")])
    assert finite_difference_report(small_params(5), batch) < 1.0


def test_zero_loss_gradient_vanishes():
    inst, g = graph_for(4)
    p = small_params()
    head = p.head.zeros_like()
    head.biases[-1][:] = 40.0
    params = PolicyParams(p.layers, head, p.window, p.hidden)
    grad = backward(params, g, inst.integer_indices, np.ones(10))
    assert np.linalg.norm(grad.flat()) < 1e-6


def test_no_scored_nodes_no_gradient():
    _, g = graph_for(5)
    grad = backward(small_params(), g, np.zeros(0, dtype=np.int64), np.zeros(0))
    assert np.all(grad.flat() == 0.0)


def test_exact_and_blas_paths_agree():
    inst, g = graph_for(6, n=20, m=12)
    p = small_params()
    a = policy_forward(p, g, inst.integer_indices, exact=True).mu
    b = policy_forward(p, g, inst.integer_indices, exact=False).mu
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_permutation_equivariance_bitwise():
    rng = np.random.default_rng(8)
    inst, w = random_binary_instance(rng, 12, 7)
    p = init_policy(1, window=1)
    lp = rng.random(12)
    perm, cperm = rng.permutation(12), rng.permutation(inst.n_cons)
    mu = policy_forward(p, encode(inst, lp, HistoryWindow(size=1).push(w), 1), inst.integer_indices).mu
    pinst = permute_instance(inst, perm, cperm)
    mup = policy_forward(p, encode(pinst, lp[perm], HistoryWindow(size=1).push(w[perm]), 1), pinst.integer_indices).mu
    np.testing.assert_array_equal(mup, mu[perm])


def test_size_generality():
    p = small_params()
    for n, m in [(5, 2), (30, 20)]:
        inst, g = graph_for(n, n=n, m=m)
        assert policy_forward(p, g, inst.integer_indices).mu.shape == (n,)


def test_width_mismatch():
    inst, g = graph_for(0, window=2)
    with pytest.raises(DimensionError):
        policy_forward(small_params(window=1), g, inst.integer_indices)


def test_sigmoid_logit_round_trip():
    gamma = np.linspace(-30, 30, 121)
    mu = sigmoid(gamma)
    back = logit(mu)
    assert np.all(np.isfinite(back))
    # one ulp of mu moves gamma by about eps / (mu (1 - mu))
    bound = 4 * np.finfo(float).eps / (mu * (1 - mu))
    assert np.all(np.abs(back - gamma) <= np.maximum(bound, 1e-12))
    assert sigmoid(np.array([-800.0]))[0] == 0.0 and sigmoid(np.array([800.0]))[0] == 1.0


def samples_for(count, seed=0):
    out = []
    for k in range(count):
        inst, g = graph_for(seed + k, n=8, m=5)
        labels = np.random.default_rng(seed + k).integers(0, 2, 8).astype(float)
        out.append(Sample(g, inst.integer_indices, labels, f"s{k:02d}"))
    return out


def test_zero_learning_rate_keeps_params():
    p = small_params()
    trained, _ = train(samples_for(3), TrainConfig(epochs=3, lr=0.0), params=p)
    np.testing.assert_array_equal(trained.flat(), p.flat())


def test_full_batch_order_independent():
    s = samples_for(5)
    cfg = TrainConfig(epochs=5, hidden=8, mlp_hidden=8)
    a, _ = train(s, cfg)
    b, _ = train(list(reversed(s)), cfg)
    np.testing.assert_array_equal(a.flat(), b.flat())


def test_single_example_smoke():
    _, log = train(samples_for(1), TrainConfig(epochs=200))
    losses = np.array(log.losses())
    # Adam jitters from epoch to epoch; 19-epoch block means must fall steadily
    blocks = losses[10:].reshape(10, 19).mean(axis=1)
    assert np.all(np.diff(blocks) < 0)
    assert losses[-1] < 0.01 * losses[0]


def test_training_log_and_valid(tmp_path):
    _, log = train(samples_for(4), TrainConfig(epochs=3, batch_size=2, hidden=8, mlp_hidden=8), valid=samples_for(2, seed=50))
    assert len(log.losses("train")) == 3 and len(log.losses("valid")) == 3
    log.to_csv(tmp_path / "log.csv")
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == "epoch,split,loss"


def test_nan_aborts_with_sample_id():
    s = samples_for(2)
    g = s[1].graph
    bad_features = g.var_features.copy()
    bad_features[0, 0] = np.nan
    bad = BipartiteGraph(g.n_var_nodes, g.n_con_nodes, bad_features, g.con_features, g.edge_index,
                         g.edge_features, g.obj_scale, g.row_norms, g.window)
    s[1] = Sample(bad, s[1].nodes, s[1].labels, "broken")
    with pytest.raises(TrainingError, match="epoch 0.*broken"):
        train(s, TrainConfig(epochs=2, hidden=8, mlp_hidden=8))


def test_empty_training_set():
    with pytest.raises(TrainingError):
        train([], TrainConfig(epochs=1))


def test_checkpoint_round_trip(tmp_path):
    p = small_params(window=3)
    save_checkpoint(p, tmp_path / "p.json")
    q = load_checkpoint(tmp_path / "p.json", window=3)
    np.testing.assert_array_equal(q.flat(), p.flat())
    assert [m.sizes for m in q.mlps()] == [m.sizes for m in p.mlps()]
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "p.json", window=0)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.json")


def test_checkpoint_feature_version_mismatch(tmp_path):
    import json

    save_checkpoint(small_params(), tmp_path / "p.json")
    data = json.loads((tmp_path / "p.json").read_text())
    data["feature_version"] = 99
    (tmp_path / "p.json").write_text(json.dumps(data))
    with pytest.raises(CheckpointError, match="feature_version"):
        load_checkpoint(tmp_path / "p.json")


def test_mlp_forward_shapes():
    m = Mlp.init(np.random.default_rng(0), [4, 6, 2])
    out, inputs = mlp_forward(m, np.ones((3, 4)))
    assert out.shape == (3, 2) and len(inputs) == 2
