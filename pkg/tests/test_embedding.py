import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from swarm_gov.embedding import (
    EmbeddingError,
    LayerWeights,
    NodeFeatures,
    embed,
    embed_backward,
    embed_slots,
    embed_slots_batch,
    gcn_layer,
    init_weights,
    slot_propagation,
)
from swarm_gov.topology import EventKind, TopologyEvent, apply_topology_event

from conftest import make_graph


def random_graph(rng, n, p=0.3):
    edges = [(a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < p]
    return make_graph(n, edges)


def dense_operator(g, order):
    """D^-1/2 (A + I) D^-1/2 on the undirected graph, built densely."""
    pos = {v: i for i, v in enumerate(order)}
    A = np.zeros((len(order), len(order)))
    for a, b in g.edges:
        A[pos[a], pos[b]] = A[pos[b], pos[a]] = 1.0
    A_hat = A + np.eye(len(order))
    d = A_hat.sum(axis=1)
    return A_hat / np.sqrt(np.outer(d, d))


ACT = {"relu": lambda z: np.maximum(z, 0), "tanh": np.tanh, "identity": lambda z: z}


def test_isolated_node_identity_layer():
    g = make_graph(1, [])
    h = NodeFeatures((0,), np.array([[1.5, -2.0, 0.25]]))
    out = gcn_layer(h, g, np.eye(3), "identity")
    assert np.array_equal(out.values, h.values)


def test_two_node_average():
    g = make_graph(2, [(0, 1)])
    h = NodeFeatures((0, 1), np.array([[1.0, 3.0], [5.0, -1.0]]))
    out = gcn_layer(h, g, np.eye(2), "identity")
    np.testing.assert_allclose(out[0], (h[0] + h[1]) / 2, atol=1e-15)
    np.testing.assert_allclose(out[1], (h[0] + h[1]) / 2, atol=1e-15)


@pytest.mark.parametrize("act", ["relu", "tanh"])
def test_zero_features_stay_zero(act):
    g = make_graph(4, [(0, 1), (1, 2), (1, 3)])
    h = NodeFeatures(tuple(range(4)), np.zeros((4, 3)))
    W = np.random.default_rng(0).normal(size=(3, 5))
    assert not gcn_layer(h, g, W, act).values.any()


def test_dimension_and_cover_errors():
    g = make_graph(3, [(0, 1)])
    h = NodeFeatures((0, 1, 2), np.ones((3, 4)))
    with pytest.raises(EmbeddingError):
        gcn_layer(h, g, np.ones((3, 2)))
    with pytest.raises(EmbeddingError):
        gcn_layer(NodeFeatures((0, 1), np.ones((2, 4))), g, np.ones((4, 2)))
    with pytest.raises(EmbeddingError):
        gcn_layer(h, g, np.ones((4, 2)), "softplus")


@given(seed=st.integers(0, 10_000), n=st.integers(1, 20), act=st.sampled_from(sorted(ACT)))
def test_gcn_layer_matches_dense_product(seed, n, act):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, p=rng.uniform(0, 0.6))
    order = list(rng.permutation(n))
    h = NodeFeatures(tuple(order), rng.normal(size=(n, 4)))
    W = rng.normal(size=(4, 6))
    expected = ACT[act](dense_operator(g, order) @ (h.values @ W))
    got = gcn_layer(h, g, W, act).values
    assert np.max(np.abs(got - expected)) <= 1e-10


def test_two_layer_embed_matches_dense_oracle():
    rng = np.random.default_rng(11)
    g = random_graph(rng, 5, 0.5)
    order = list(range(5))
    h0 = NodeFeatures(tuple(order), rng.normal(size=(5, 4)))
    w = init_weights([4, 16, 8], 2)
    P = dense_operator(g, order)
    expected = P @ (np.maximum(P @ (h0.values @ w.matrices[0]), 0) @ w.matrices[1])
    assert np.max(np.abs(embed(g, h0, w).values - expected)) <= 1e-10


def test_empty_weights_are_identity():
    g = make_graph(3, [(0, 1), (1, 2)])
    h0 = NodeFeatures((0, 1, 2), np.arange(12.0).reshape(3, 4))
    assert np.array_equal(embed(g, h0, LayerWeights([], [])).values, h0.values)
    assert init_weights([4], 0).matrices == []


@given(seed=st.integers(0, 10_000))
def test_embed_is_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 12))
    g = random_graph(rng, n, 0.4)
    perm = rng.permutation(n)
    relabel = make_graph(n, [(perm[a], perm[b]) for a, b in g.edges])
    X = rng.normal(size=(n, 4))
    w = init_weights([4, 6, 3], seed)
    out = embed(g, NodeFeatures(tuple(range(n)), X), w).as_dict()
    Xp = np.zeros_like(X)
    Xp[perm] = X
    outp = embed(relabel, NodeFeatures(tuple(range(n)), Xp), w).as_dict()
    # equal up to floating-point summation order
    for v in range(n):
        np.testing.assert_allclose(out[v], outp[int(perm[v])], rtol=0, atol=1e-13)


@given(seed=st.integers(0, 10_000))
def test_identity_propagation_never_grows_the_l2_norm(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 20))
    g = random_graph(rng, n, rng.uniform(0, 0.8))
    h = NodeFeatures(tuple(range(n)), rng.normal(size=(n, 3)))
    start = np.linalg.norm(h.values)
    for _ in range(20):
        h = gcn_layer(h, g, np.eye(3), "identity")
        assert np.linalg.norm(h.values) <= start * (1.0 + 1e-9)


def test_init_weights_contract():
    a, b = init_weights([4, 8], 3), init_weights([4, 8], 3)
    assert np.array_equal(a.matrices[0], b.matrices[0])
    assert np.all(np.abs(a.matrices[0]) <= math.sqrt(6 / 12))
    w = init_weights([4, 8, 2], 5)
    assert [m.shape for m in w.matrices] == [(4, 8), (8, 2)]
    assert w.activations == ["relu", "identity"]
    with pytest.raises(EmbeddingError):
        init_weights([4, 0], 1)
    with pytest.raises(EmbeddingError):
        init_weights([], 1)


def test_reembedding_after_topology_event_tracks_new_graph():
    rng = np.random.default_rng(3)
    g = make_graph(6, [(0, 1), (0, 2), (1, 3), (2, 4), (3, 5)])
    h = NodeFeatures(tuple(range(6)), rng.normal(size=(6, 4)))
    w = init_weights([4, 5], 0, ["identity"])
    g2 = apply_topology_event(g, TopologyEvent(EventKind.ADD_EDGE, edge=(2, 5)))
    expected = dense_operator(g2, list(range(6))) @ (h.values @ w.matrices[0])
    assert np.max(np.abs(embed(g2, h, w).values - expected)) <= 1e-10
    assert not np.allclose(embed(g, h, w).values, expected)


def test_slot_forward_agrees_with_id_forward():
    rng = np.random.default_rng(8)
    g = make_graph(5, [(0, 1), (1, 2), (0, 3), (3, 4)])
    g = apply_topology_event(g, TopologyEvent(EventKind.REMOVE_SERVICE, service=2))
    slots = 8
    X = np.zeros((slots, 4))
    ids = sorted(g.nodes)
    X[ids] = rng.normal(size=(len(ids), 4))
    w = init_weights([4, 6, 3], 1)
    out = embed_slots(slot_propagation(g, slots), X, w)
    ref = embed(g, NodeFeatures(tuple(ids), X[ids]), w).values
    np.testing.assert_allclose(out[ids], ref, atol=1e-12)
    assert not out[[2, 5, 6, 7]].any()


def test_embed_backward_matches_finite_differences():
    rng = np.random.default_rng(5)
    g = random_graph(rng, 7, 0.4)
    P = slot_propagation(g, 7)
    X = rng.normal(size=(3, 7, 4))
    w = init_weights([4, 5, 3], 4, ["tanh", "identity"])
    G = rng.normal(size=(3, 7, 3))
    out, tape = embed_slots_batch(P, X, w)
    grads = embed_backward(P, tape, G, w)

    def loss(ws):
        return float(np.sum(G * embed_slots_batch(P, X, ws)[0]))

    h = 1e-6
    for layer, gW in enumerate(grads):
        fd = np.zeros_like(gW)
        for idx in np.ndindex(gW.shape):
            plus, minus = w.copy(), w.copy()
            plus.matrices[layer][idx] += h
            minus.matrices[layer][idx] -= h
            fd[idx] = (loss(plus) - loss(minus)) / (2 * h)
        np.testing.assert_allclose(gW, fd, rtol=1e-6, atol=1e-8)
