"""GCN policy over bipartite MIP graphs, trained by Bernoulli log-likelihood.

Embeddings follow ``Z0 = U``, ``Z(l+1) = Adj @ g_l(Z(l))`` where ``Adj`` is the
binary adjacency with self-loops and each ``g_l`` is an MLP applied row-wise.
A head MLP maps the final embedding of every integer variable to a logit;
the action probability is its sigmoid. Gradients are computed by hand.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import CheckpointError, DimensionError, TrainingError
from .graph import FEATURE_VERSION, BipartiteGraph, node_feature_width

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


# -- small dense building blocks ----------------------------------------


@dataclass
class Mlp:
    """Row-wise MLP: ReLU after every hidden layer, identity output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @classmethod
    def init(cls, rng: np.random.Generator, sizes: Sequence[int], out_scale: float = 1.0) -> "Mlp":
        weights, biases = [], []
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            if k == len(sizes) - 2:
                W *= out_scale
            weights.append(W)
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def zeros_like(self) -> "Mlp":
        return Mlp([np.zeros_like(W) for W in self.weights], [np.zeros_like(b) for b in self.biases])


def _rowwise_matmul(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``X @ W`` summed in a fixed order per row, independent of row position."""
    out = X[:, :1] * W[:1]
    for d in range(1, X.shape[1]):
        out = out + X[:, d:d + 1] * W[d:d + 1]
    return out


def mlp_forward(mlp: Mlp, X: np.ndarray, exact: bool = False):
    inputs = []
    h = X
    last = len(mlp.weights) - 1
    for k, (W, b) in enumerate(zip(mlp.weights, mlp.biases)):
        inputs.append(h)
        pre = (_rowwise_matmul(h, W) if exact else h @ W) + b
        h = np.maximum(pre, 0.0) if k < last else pre
    return h, inputs


def mlp_backward(mlp: Mlp, inputs: list[np.ndarray], dout: np.ndarray) -> tuple[np.ndarray, Mlp]:
    grads = mlp.zeros_like()
    delta = dout
    for k in range(len(mlp.weights) - 1, -1, -1):
        h_in = inputs[k]
        grads.weights[k] = h_in.T @ delta
        grads.biases[k] = delta.sum(axis=0)
        delta = delta @ mlp.weights[k].T
        if k > 0:
            # h_in is the ReLU output of the previous layer
            delta = delta * (h_in > 0.0)
    return delta, grads


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


# -- policy parameters --------------------------------------------------


@dataclass
class PolicyParams:
    layers: list[Mlp]
    head: Mlp
    window: int
    hidden: int
    feature_version: int = FEATURE_VERSION

    @property
    def input_dim(self) -> int:
        return self.layers[0].sizes[0]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def mlps(self) -> list[Mlp]:
        return [*self.layers, self.head]

    def flat(self) -> np.ndarray:
        """All parameters in checkpoint order: layer MLPs, then head; each W row-major then b."""
        return np.concatenate([a.ravel() for mlp in self.mlps() for a in mlp.arrays()])

    def with_flat(self, vec: np.ndarray) -> "PolicyParams":
        vec = np.asarray(vec, dtype=float)
        pos = 0
        rebuilt = []
        for mlp in self.mlps():
            ws, bs = [], []
            for W, b in zip(mlp.weights, mlp.biases):
                ws.append(vec[pos:pos + W.size].reshape(W.shape).copy())
                pos += W.size
                bs.append(vec[pos:pos + b.size].copy())
                pos += b.size
            rebuilt.append(Mlp(ws, bs))
        if pos != len(vec):
            raise DimensionError(f"flat vector has {len(vec)} entries, expected {pos}")
        return PolicyParams(rebuilt[:-1], rebuilt[-1], self.window, self.hidden, self.feature_version)

    def zeros_like(self) -> "PolicyParams":
        return self.with_flat(np.zeros_like(self.flat()))


def init_policy(
    seed: int = 0,
    window: int = 3,
    hidden: int = 64,
    n_layers: int = 2,
    mlp_hidden: int = 64,
) -> PolicyParams:
    rng = np.random.default_rng(seed)
    width = node_feature_width(window)
    layers = []
    for l in range(n_layers):
        sizes = [width if l == 0 else hidden, mlp_hidden, hidden]
        # sum aggregation grows activations with node degree; start small
        layers.append(Mlp.init(rng, sizes, out_scale=0.1))
    head = Mlp.init(rng, [hidden, mlp_hidden, 1], out_scale=0.1)
    return PolicyParams(layers, head, window, hidden)


# -- forward --------------------------------------------------------------


def _aggregate_sorted(G: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Neighbour sums with the summands sorted, so node order cannot change the bits."""
    padded = np.vstack([G, np.zeros((1, G.shape[1]))])
    vals = np.sort(padded[table], axis=1)
    acc = vals[:, 0].copy()
    for d in range(1, vals.shape[1]):
        acc = acc + vals[:, d]
    return acc


def _check_width(params: PolicyParams, U: np.ndarray) -> None:
    if U.shape[1] != params.input_dim:
        raise DimensionError(f"node features have width {U.shape[1]}, policy expects {params.input_dim}")


def gcn_forward(params: PolicyParams, graph: BipartiteGraph, exact: bool = True) -> np.ndarray:
    """Node embeddings (K x H).

    ``exact=True`` uses order-independent kernels so that relabelling nodes
    permutes the output rows bit-for-bit; ``exact=False`` uses BLAS.
    """
    U = graph.node_features
    _check_width(params, U)
    Z = U
    for mlp in params.layers:
        G, _ = mlp_forward(mlp, Z, exact=exact)
        Z = _aggregate_sorted(G, graph.neighbor_table) if exact else graph.adjacency_sparse @ G
    return Z


@dataclass
class PolicyOutput:
    logits: np.ndarray
    mu: np.ndarray


def policy_forward(params: PolicyParams, graph: BipartiteGraph, integer_indices, exact: bool = True) -> PolicyOutput:
    idx = np.asarray(integer_indices, dtype=np.int64)
    if len(idx) and (idx.min() < 0 or idx.max() >= graph.n_var_nodes):
        raise DimensionError("integer index outside the variable nodes")
    Z = gcn_forward(params, graph, exact=exact)
    out, _ = mlp_forward(params.head, Z[idx], exact=exact)
    logits = out[:, 0]
    return PolicyOutput(logits, sigmoid(logits))


def action_log_prob(output: PolicyOutput, action) -> float:
    """log of the factorized Bernoulli probability of a 0/1 action vector."""
    a = np.asarray(action, dtype=float)
    mu = output.mu
    return float(np.sum(a * np.log(np.maximum(mu, LOG_CLAMP)) + (1 - a) * np.log(np.maximum(1 - mu, LOG_CLAMP))))


def nll_loss(outputs: Sequence[PolicyOutput], actions: Sequence) -> float:
    if len(outputs) != len(actions):
        raise DimensionError(f"{len(outputs)} outputs but {len(actions)} actions")
    total = 0.0
    for out, a in zip(outputs, actions):
        if np.shape(a) != out.mu.shape:
            raise DimensionError(f"action shape {np.shape(a)} does not match output shape {out.mu.shape}")
        total -= action_log_prob(out, a)
    return total


# -- batched training path -----------------------------------------------


@dataclass
class Sample:
    """One supervised example: a graph, the variable nodes scored, and 0/1 labels."""

    graph: BipartiteGraph
    nodes: np.ndarray
    labels: np.ndarray
    sample_id: str = ""


@dataclass
class Batch:
    U: np.ndarray
    adjacency: sp.csr_matrix
    nodes: np.ndarray
    labels: np.ndarray
    owner: np.ndarray  # sample position of each scored node
    sample_ids: list[str] = field(default_factory=list)


def make_batch(samples: Sequence[Sample]) -> Batch:
    offsets = np.cumsum([0] + [s.graph.n_nodes for s in samples])
    U = np.vstack([s.graph.node_features for s in samples])
    adjacency = sp.block_diag([s.graph.adjacency_sparse for s in samples], format="csr")
    nodes = np.concatenate([np.asarray(s.nodes, dtype=np.int64) + off for s, off in zip(samples, offsets)])
    labels = np.concatenate([np.asarray(s.labels, dtype=float) for s in samples])
    owner = np.concatenate([np.full(len(s.nodes), k) for k, s in enumerate(samples)])
    return Batch(U, adjacency, nodes, labels, owner, [s.sample_id for s in samples])


def _bernoulli_terms(mu: np.ndarray, a: np.ndarray) -> np.ndarray:
    return -(a * np.log(np.maximum(mu, LOG_CLAMP)) + (1 - a) * np.log(np.maximum(1 - mu, LOG_CLAMP)))


def loss_and_grad(params: PolicyParams, batch: Batch) -> tuple[float, PolicyParams, np.ndarray]:
    """Summed NLL over the batch, its gradient, and per-sample losses."""
    _check_width(params, batch.U)
    A = batch.adjacency
    caches = []
    Z = batch.U
    for mlp in params.layers:
        G, inputs = mlp_forward(mlp, Z)
        caches.append(inputs)
        Z = A @ G
    V = Z[batch.nodes]
    out, head_inputs = mlp_forward(params.head, V)
    gamma = out[:, 0]
    mu = sigmoid(gamma)
    a = batch.labels
    terms = _bernoulli_terms(mu, a)
    per_sample = np.bincount(batch.owner, weights=terms, minlength=len(batch.sample_ids))

    # d/dgamma of -a log(clamp(mu)) - (1-a) log(clamp(1-mu)); clamped branches are flat
    dgamma = -a * (1 - mu) * (mu > LOG_CLAMP) + (1 - a) * mu * ((1 - mu) > LOG_CLAMP)
    dV, head_grad = mlp_backward(params.head, head_inputs, dgamma[:, None])
    dZ = np.zeros_like(Z)
    np.add.at(dZ, batch.nodes, dV)
    layer_grads = [None] * params.n_layers
    for l in range(params.n_layers - 1, -1, -1):
        dG = A.T @ dZ
        dZ, layer_grads[l] = mlp_backward(params.layers[l], caches[l], dG)
    grad = PolicyParams(layer_grads, head_grad, params.window, params.hidden, params.feature_version)
    return float(terms.sum()), grad, per_sample


def backward(params: PolicyParams, graph: BipartiteGraph, integer_indices, actions) -> PolicyParams:
    """Gradient of the summed NLL of ``actions`` on one graph."""
    return loss_and_grad(params, make_batch([Sample(graph, np.asarray(integer_indices), np.asarray(actions, float))]))[1]


# -- optimizer and training loop -------------------------------------------


class Adam:
    def __init__(self, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1 ** self.t)
        v_hat = self.v / (1 - self.b2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int | None = None  # None: full batch
    seed: int = 0
    hidden: int = 64
    n_layers: int = 2
    mlp_hidden: int = 64
    shuffle: bool = True
    grad_clip: float | None = 10.0


@dataclass
class TrainLog:
    rows: list[tuple[int, str, float]] = field(default_factory=list)

    def add(self, epoch: int, split: str, loss: float) -> None:
        self.rows.append((epoch, split, loss))

    def losses(self, split: str = "train") -> list[float]:
        return [loss for _, s, loss in self.rows if s == split]

    def to_csv(self, path) -> None:
        lines = ["epoch,split,loss"] + [f"{e},{s},{loss!r}" for e, s, loss in self.rows]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def batch_loss(params: PolicyParams, batch: Batch) -> float:
    Z = batch.U
    for mlp in params.layers:
        Z = batch.adjacency @ mlp_forward(mlp, Z)[0]
    mu = sigmoid(mlp_forward(params.head, Z[batch.nodes])[0][:, 0])
    return float(_bernoulli_terms(mu, batch.labels).sum())


def train(
    samples: Sequence[Sample],
    config: TrainConfig = TrainConfig(),
    valid: Sequence[Sample] = (),
    params: PolicyParams | None = None,
) -> tuple[PolicyParams, TrainLog]:
    """Minimize the mean per-sample NLL with Adam.

    The logged train loss of an epoch is the mean over its batches, each
    measured before that batch's update; the valid loss uses the parameters
    the epoch started from. Full-batch mode visits samples in ``sample_id``
    order, which makes the result independent of how ``samples`` is ordered.
    """
    if not samples:
        raise TrainingError("empty training set")
    window = samples[0].graph.window
    if params is None:
        params = init_policy(config.seed, window, config.hidden, config.n_layers, config.mlp_hidden)
    for s in samples:
        if s.graph.window != params.window or s.graph.feature_version != params.feature_version:
            raise TrainingError(f"sample {s.sample_id!r} does not match the policy feature layout")
    rng = np.random.default_rng(config.seed)
    opt = Adam(config.lr)
    theta = params.flat()
    full_batch = config.batch_size is None or config.batch_size >= len(samples)
    if full_batch:
        ordered = sorted(samples, key=lambda s: s.sample_id)
        fixed = [make_batch(ordered)]
    valid_batches = [make_batch(list(valid))] if valid else []
    history = TrainLog()
    n = len(samples)
    for epoch in range(config.epochs):
        if full_batch:
            batches = fixed
        else:
            order = rng.permutation(n) if config.shuffle else np.arange(n)
            batches = [make_batch([samples[i] for i in order[k:k + config.batch_size]]) for k in range(0, n, config.batch_size)]
        epoch_loss = 0.0
        start = params
        for batch in batches:
            loss, grad, per_sample = loss_and_grad(params, batch)
            if not np.isfinite(loss):
                bad = int(np.flatnonzero(~np.isfinite(per_sample))[0]) if np.any(~np.isfinite(per_sample)) else 0
                raise TrainingError(f"non-finite loss at epoch {epoch}, sample {batch.sample_ids[bad]!r}")
            epoch_loss += loss
            g = grad.flat() / len(batch.sample_ids)
            if config.grad_clip is not None:
                norm = float(np.linalg.norm(g))
                if norm > config.grad_clip:
                    g = g * (config.grad_clip / norm)
            theta = opt.step(theta, g)
            params = params.with_flat(theta)
        history.add(epoch, "train", epoch_loss / n)
        if valid_batches:
            history.add(epoch, "valid", batch_loss(start, valid_batches[0]) / len(valid))
    return params, history


# -- checkpoints ----------------------------------------------------------

CHECKPOINT_FORMAT = "lnsforge-policy"


def save_checkpoint(params: PolicyParams, path, extra: dict | None = None) -> None:
    data = {
        "format": CHECKPOINT_FORMAT,
        "feature_version": params.feature_version,
        "window": params.window,
        "hidden": params.hidden,
        "layer_sizes": [mlp.sizes for mlp in params.layers],
        "head_sizes": params.head.sizes,
        "order": "gcn layers then head; per linear layer W (row-major, in x out) then b",
        "weights": params.flat().tolist(),
    }
    if extra:
        data["extra"] = extra
    Path(path).write_text(json.dumps(data) + "\n", encoding="utf-8")


def load_checkpoint(path, window: int | None = None) -> PolicyParams:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = json.loads(path.read_text(encoding="utf-8"))
    if data.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a policy checkpoint")
    if data["feature_version"] != FEATURE_VERSION:
        raise CheckpointError(f"{path}: feature_version {data['feature_version']} != supported {FEATURE_VERSION}")
    if window is not None and data["window"] != window:
        raise CheckpointError(f"{path}: history window {data['window']} != expected {window}")
    layers = [Mlp([np.zeros((a, b)) for a, b in zip(s[:-1], s[1:])], [np.zeros(b) for b in s[1:]]) for s in data["layer_sizes"]]
    hs = data["head_sizes"]
    head = Mlp([np.zeros((a, b)) for a, b in zip(hs[:-1], hs[1:])], [np.zeros(b) for b in hs[1:]])
    shell = PolicyParams(layers, head, data["window"], data["hidden"], data["feature_version"])
    return shell.with_flat(np.array(data["weights"], dtype=float))
