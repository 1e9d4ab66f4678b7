"""Graph-convolutional embedding of per-service state.

One layer computes, for every service v::

    out_v = act( sum_{u in N(v) + {v}} (h_u @ W) / c_vu ),   c_vu = sqrt(d(v) d(u))

with d the undirected degree plus the virtual self-loop. The sum is evaluated
as a sparse matrix product over the edge list (one message per edge direction
plus the self message).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .topology import DependencyGraph, TopologyError

ACTIVATIONS = ("relu", "tanh", "identity")


class EmbeddingError(ValueError):
    pass


@dataclass
class NodeFeatures:
    """Feature rows keyed by service id."""

    ids: tuple
    values: np.ndarray  # (len(ids), F)

    def __post_init__(self):
        self.ids = tuple(int(i) for i in self.ids)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.ids):
            raise EmbeddingError("feature matrix must have one row per id")
        if not np.all(np.isfinite(self.values)):
            raise EmbeddingError("features must be finite")

    @classmethod
    def from_mapping(cls, m: Mapping[int, Sequence[float]]) -> "NodeFeatures":
        ids = sorted(m)
        return cls(tuple(ids), np.array([np.asarray(m[i], dtype=float) for i in ids]).reshape(len(ids), -1))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __getitem__(self, v: int) -> np.ndarray:
        return self.values[self.ids.index(v)]

    def as_dict(self) -> dict:
        return {i: self.values[k] for k, i in enumerate(self.ids)}


@dataclass
class LayerWeights:
    matrices: list
    activations: list = field(default=None)

    def __post_init__(self):
        self.matrices = [np.asarray(m, dtype=float) for m in self.matrices]
        if self.activations is None:
            # relu on hidden layers, identity on the last
            self.activations = ["relu"] * max(len(self.matrices) - 1, 0) + ["identity"] * min(len(self.matrices), 1)
        if len(self.activations) != len(self.matrices):
            raise EmbeddingError("one activation per layer is required")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise EmbeddingError(f"unknown activation {a!r}")
        for m0, m1 in zip(self.matrices, self.matrices[1:]):
            if m0.shape[1] != m1.shape[0]:
                raise EmbeddingError(f"layer shapes do not chain: {m0.shape} then {m1.shape}")

    @property
    def in_dim(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.matrices[-1].shape[1]

    def copy(self) -> "LayerWeights":
        return LayerWeights([m.copy() for m in self.matrices], list(self.activations))


def init_weights(dims: Sequence[int], seed: int, activations=None) -> LayerWeights:
    """Glorot-uniform matrices for consecutive ``dims``; ``dims`` of length 1 gives no layers."""
    if len(dims) < 1:
        raise EmbeddingError("dims must contain at least one entry")
    if any(int(d) <= 0 for d in dims):
        raise EmbeddingError(f"dimensions must be positive, got {list(dims)}")
    rng = np.random.default_rng(seed)
    mats = []
    for a, b in zip(dims, dims[1:]):
        bound = math.sqrt(6.0 / (a + b))
        mats.append(rng.uniform(-bound, bound, size=(a, b)))
    if not mats:
        return LayerWeights([], [])
    return LayerWeights(mats, activations)


def _activate(z: np.ndarray, name: str) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(z: np.ndarray, name: str) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(float)
    if name == "tanh":
        return 1.0 - np.tanh(z) ** 2
    return np.ones_like(z)


def propagation_matrix(g: DependencyGraph, order: Sequence[int]) -> sp.csr_matrix:
    """Sparse operator P with P[v, u] = 1/c_vu over N(v) + {v}; rows follow ``order``."""
    pos = {v: i for i, v in enumerate(order)}
    n = len(order)
    und = set()
    for c, e in g.edges:
        if c in pos and e in pos:
            und.add((pos[c], pos[e]))
            und.add((pos[e], pos[c]))
    deg = np.ones(n)
    for i, _ in und:
        deg[i] += 1
    rows = [i for i, _ in und] + list(range(n))
    cols = [j for _, j in und] + list(range(n))
    vals = [1.0 / math.sqrt(deg[i] * deg[j]) for i, j in zip(rows, cols)]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def slot_propagation(g: DependencyGraph, slots: int) -> sp.csr_matrix:
    """Propagation operator over padded service slots (row = service id); cached on the graph."""
    key = ("gcn_slots", slots)
    if key not in g.cache:
        if g.nodes and max(g.nodes) >= slots:
            raise TopologyError(f"service id {max(g.nodes)} does not fit in {slots} slots")
        order = g.sorted_nodes()
        p = propagation_matrix(g, order).tocoo()
        ids = np.asarray(order, dtype=int)
        g.cache[key] = sp.csr_matrix((p.data, (ids[p.row], ids[p.col])), shape=(slots, slots))
    return g.cache[key]


def _check_cover(h: NodeFeatures, g: DependencyGraph):
    if set(h.ids) != set(g.nodes):
        missing = sorted(set(g.nodes) - set(h.ids))
        extra = sorted(set(h.ids) - set(g.nodes))
        raise EmbeddingError(f"features must cover exactly the graph nodes (missing {missing}, extra {extra})")


def gcn_layer(h: NodeFeatures, g: DependencyGraph, W: np.ndarray, activation: str = "identity") -> NodeFeatures:
    _check_cover(h, g)
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != h.dim:
        raise EmbeddingError(f"weight shape {W.shape} incompatible with feature dimension {h.dim}")
    if activation not in ACTIVATIONS:
        raise EmbeddingError(f"unknown activation {activation!r}")
    order = list(h.ids)
    P = propagation_matrix(g, order)
    out = _activate(P @ (h.values @ W), activation)
    return NodeFeatures(h.ids, out)


def embed(g: DependencyGraph, h0: NodeFeatures, weights: LayerWeights) -> NodeFeatures:
    h = h0
    _check_cover(h, g)
    for W, act in zip(weights.matrices, weights.activations):
        h = gcn_layer(h, g, W, act)
    return h


def embed_slots(P: sp.csr_matrix, X: np.ndarray, weights: LayerWeights) -> np.ndarray:
    """Slot-indexed forward pass; absent slots have zero rows in P and stay zero."""
    h = X
    for W, act in zip(weights.matrices, weights.activations):
        h = _activate(P @ (h @ W), act)
    return h


def embed_slots_batch(P: sp.csr_matrix, X: np.ndarray, weights: LayerWeights):
    """Forward pass over a batch (B, slots, F) sharing one graph; returns output and tape."""
    B, n, _ = X.shape
    tape = []
    h = X
    for W, act in zip(weights.matrices, weights.activations):
        hw = h @ W  # (B, n, F')
        z = (P @ hw.transpose(1, 0, 2).reshape(n, -1)).reshape(n, B, -1).transpose(1, 0, 2)
        tape.append((h, z))
        h = _activate(z, act)
    return h, tape


def embed_backward(P: sp.csr_matrix, tape, grad_out: np.ndarray, weights: LayerWeights) -> list:
    """Gradients of sum(grad_out * output) w.r.t. each weight matrix (P is symmetric)."""
    grads = [None] * len(weights.matrices)
    g = grad_out
    B = grad_out.shape[0]
    n = grad_out.shape[1]
    for layer in reversed(range(len(weights.matrices))):
        h, z = tape[layer]
        gz = g * _activate_grad(z, weights.activations[layer])
        # out = P (h W)  =>  dW = sum_b (P h)^T gz ; dh = P^T gz W^T
        ph = (P @ h.transpose(1, 0, 2).reshape(n, -1)).reshape(n, B, -1).transpose(1, 0, 2)
        grads[layer] = np.einsum("bnf,bng->fg", ph, gz)
        if layer > 0:
            pg = (P.T @ gz.transpose(1, 0, 2).reshape(n, -1)).reshape(n, B, -1).transpose(1, 0, 2)
            g = pg @ weights.matrices[layer].T
    return grads
