"""Bipartite variable/constraint graph encoding of a MIP.

Feature layout (``FEATURE_VERSION`` 1, documented in ``docs/features.md``):

variable node, ``7 + 2 * window`` columns
    0 objective coefficient / max|c|, 1 lb, 2 ub, 3 is_integer,
    4 LP relaxation value, 5 LP presence mask, 6 LP fractionality,
    then per history slot (newest first) the past value and its mask.
constraint node, 2 columns
    0 rhs / max(1, row_norm), 1 log1p(row_norm), with row_norm = max|a_rj|.
edge, 1 column
    coefficient / row_norm.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError
from .mip import MipInstance

FEATURE_VERSION = 1
N_VAR_STATIC = 7
N_CON_FEATURES = 2
DEFAULT_WINDOW = 3


def var_feature_width(window: int) -> int:
    return N_VAR_STATIC + 2 * window


def node_feature_width(window: int) -> int:
    # variable block | constraint block | is-variable flag | log1p(degree)
    return var_feature_width(window) + N_CON_FEATURES + 2


@dataclass(frozen=True)
class HistoryWindow:
    """Most recent assignments, newest last."""

    past: tuple[np.ndarray, ...] = ()
    size: int = DEFAULT_WINDOW

    def push(self, x) -> "HistoryWindow":
        x = np.array(x, dtype=float, copy=True)
        past = (self.past + (x,))[-self.size:] if self.size else ()
        return HistoryWindow(past, self.size)


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    n_var_nodes: int
    n_con_nodes: int
    var_features: np.ndarray
    con_features: np.ndarray
    edge_index: np.ndarray  # (E, 2) rows of (var, con)
    edge_features: np.ndarray  # (E, 1)
    obj_scale: float
    row_norms: np.ndarray
    window: int = DEFAULT_WINDOW
    feature_version: int = FEATURE_VERSION

    @property
    def n_nodes(self) -> int:
        return self.n_var_nodes + self.n_con_nodes

    @property
    def edges(self) -> list[tuple[int, int, np.ndarray]]:
        return [(int(v), int(c), f) for (v, c), f in zip(self.edge_index, self.edge_features)]

    @cached_property
    def adjacency_sparse(self) -> sp.csr_matrix:
        """Binary K x K adjacency with self-loops; variables first, then constraints."""
        K = self.n_nodes
        v = self.edge_index[:, 0]
        c = self.edge_index[:, 1] + self.n_var_nodes
        rows = np.concatenate([v, c, np.arange(K)])
        cols = np.concatenate([c, v, np.arange(K)])
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(K, K))

    @property
    def adjacency(self) -> np.ndarray:
        return self.adjacency_sparse.toarray()

    @cached_property
    def degree(self) -> np.ndarray:
        """Number of incident edges, self-loop excluded."""
        return np.asarray(self.adjacency_sparse.sum(axis=1)).ravel() - 1.0

    @cached_property
    def node_features(self) -> np.ndarray:
        """Shared-width node matrix fed to the GCN."""
        n, m = self.n_var_nodes, self.n_con_nodes
        dv = self.var_features.shape[1]
        U = np.zeros((n + m, node_feature_width(self.window)))
        U[:n, :dv] = self.var_features
        U[n:, dv:dv + N_CON_FEATURES] = self.con_features
        U[:n, -2] = 1.0
        U[:, -1] = np.log1p(self.degree)
        return U

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """Padded neighbour indices (self included); padding points at row K."""
        A = self.adjacency_sparse
        K = self.n_nodes
        counts = np.diff(A.indptr)
        width = int(counts.max()) if K else 0
        table = np.full((K, width), K, dtype=np.int64)
        for i in range(K):
            nbrs = A.indices[A.indptr[i]:A.indptr[i + 1]]
            table[i, :len(nbrs)] = nbrs
        return table


def encode(inst: MipInstance, lp_solution=None, history: HistoryWindow | None = None, window: int | None = None) -> BipartiteGraph:
    """Encode ``inst`` (plus optional LP point and assignment history) as a graph."""
    if window is None:
        window = history.size if history is not None else DEFAULT_WINDOW
    n, m = inst.n_vars, inst.n_cons
    c = inst.objective
    obj_scale = float(np.max(np.abs(c))) if n else 0.0
    X = np.zeros((n, var_feature_width(window)))
    X[:, 0] = c / obj_scale if obj_scale > 0 else 0.0
    X[:, 1] = inst.lb
    X[:, 2] = inst.ub
    X[:, 3] = inst.is_integer
    if lp_solution is not None:
        lp_solution = np.asarray(lp_solution, dtype=float)
        if lp_solution.shape != (n,):
            raise DimensionError(f"LP solution has shape {lp_solution.shape}, expected ({n},)")
        X[:, 4] = lp_solution
        X[:, 5] = 1.0
        X[:, 6] = np.abs(lp_solution - np.round(lp_solution))
    if history is not None:
        for slot, past in enumerate(reversed(history.past[-window:] if window else ())):
            past = np.asarray(past, dtype=float)
            if past.shape != (n,):
                raise DimensionError(f"history entry has shape {past.shape}, expected ({n},)")
            X[:, N_VAR_STATIC + 2 * slot] = past
            X[:, N_VAR_STATIC + 2 * slot + 1] = 1.0

    edge_index = []
    coefs = []
    row_norms = np.zeros(m)
    C = np.zeros((m, N_CON_FEATURES))
    for r, con in enumerate(inst.constraints):
        norm = max((abs(a) for _, a in con.terms if a != 0.0), default=0.0)
        row_norms[r] = norm
        C[r, 0] = con.rhs / max(1.0, norm)
        C[r, 1] = np.log1p(norm)
        for i, a in con.terms:
            if a != 0.0:
                edge_index.append((i, r))
                coefs.append(a / norm)
    edge_index = np.array(edge_index, dtype=np.int64).reshape(-1, 2)
    edge_features = np.array(coefs, dtype=float).reshape(-1, 1)
    return BipartiteGraph(n, m, X, C, edge_index, edge_features, obj_scale, row_norms, window)


def decode(graph: BipartiteGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rebuild ``(A, b, c)`` from a graph and its recorded scale constants."""
    n, m = graph.n_var_nodes, graph.n_con_nodes
    c = graph.var_features[:, 0] * graph.obj_scale
    A = np.zeros((m, n))
    for (v, r), f in zip(graph.edge_index, graph.edge_features[:, 0]):
        A[r, v] = f * graph.row_norms[r]
    b = graph.con_features[:, 0] * np.maximum(1.0, graph.row_norms)
    return A, b, c
