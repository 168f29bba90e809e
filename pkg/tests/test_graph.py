import numpy as np
import pytest

from camac.environment import ChargingWorld, ScenarioConfig
from camac.errors import ConfigError, ShapeError
from camac.graph import (RELATIONS, GnnLayer, GnnLayerParams, GraphEncoder, HeteroGnnLayer,
                         HeteroGraph, HeteroLayerParams, aggregate_neighbors, batch_adjacency,
                         build_graph, gnn_layer, hetero_gnn_layer, parse_edge_list)
from tests.support import duplicate_neighbors, fd_check, random_graph


def line_graph(values, edges, relations=("r",)):
    ids = [f"n{i}" for i in range(len(values))]
    feats = np.asarray(values, dtype=np.float64).reshape(len(values), -1)
    return HeteroGraph(ids, ["ev"] * len(ids), feats,
                       [(rel, f"n{s}", f"n{d}") for rel, s, d in edges], relations)


def test_aggregate_examples():
    g = line_graph([[1.0], [3.0], [5.0]], [("r", 0, 2), ("r", 1, 2)])
    H = g.features
    assert np.array_equal(aggregate_neighbors(g, "n0", H, np.eye(1)), [0.0])
    assert np.array_equal(aggregate_neighbors(g, "n2", H, np.eye(1)), [2.0])
    g1 = line_graph([[4.0], [1.0]], [("r", 0, 1)])
    assert np.array_equal(aggregate_neighbors(g1, "n1", g1.features, np.eye(1)), [4.0])
    with pytest.raises(KeyError):
        aggregate_neighbors(g, "zz", H, np.eye(1))


def test_gnn_layer_examples():
    g = line_graph([[2.0], [7.0]], [])
    p = GnnLayerParams(W=np.eye(1), b=np.zeros(1), W_edge=np.eye(1))
    assert np.array_equal(gnn_layer(g, g.features, p), np.zeros((2, 1)))
    g = line_graph([[2.0], [7.0]], [("r", 0, 1)])
    assert np.array_equal(gnn_layer(g, g.features, p)[1], [2.0])
    with pytest.raises(ShapeError):
        gnn_layer(g, np.ones((2, 3)), p)


def test_gnn_layer_locality():
    # v=2 hears only from 0; changing node 1 must not move its output
    rng = np.random.default_rng(0)
    g = line_graph(rng.normal(size=(3, 2)), [("r", 0, 2), ("r", 2, 1)])
    p = GnnLayerParams(W=rng.normal(size=(2, 2)), b=rng.normal(size=2), W_edge=rng.normal(size=(2, 2)))
    H = g.features.copy()
    out = gnn_layer(g, H, p)
    H[1] = rng.normal(size=2)
    assert np.array_equal(gnn_layer(g, H, p)[2], out[2])


def test_hetero_layer_examples():
    g = line_graph([[-1.0], [1.0], [3.0]], [("r", 1, 0), ("r", 2, 0)])
    p = HeteroLayerParams(W_rel={"r": np.eye(1)}, W_self=np.zeros((1, 1)))
    assert np.array_equal(hetero_gnn_layer(g, g.features, p)[0], [2.0])
    lonely = line_graph([[-1.0], [2.0]], [])
    p = HeteroLayerParams(W_rel={"r": np.eye(1)}, W_self=np.array([[3.0]]))
    assert np.array_equal(hetero_gnn_layer(lonely, lonely.features, p), [[0.0], [6.0]])
    with pytest.raises(ConfigError):
        hetero_gnn_layer(g, g.features, HeteroLayerParams(W_rel={}, W_self=np.eye(1)))


@pytest.mark.parametrize("seed", range(20))
def test_hetero_matches_mean_aggregator(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, relations=("r",))
    d = g.features.shape[1]
    W, W_edge = rng.normal(size=(d, d)), rng.normal(size=(d, d))
    plain = gnn_layer(g, g.features, GnnLayerParams(W, np.zeros(d), W_edge))
    het = hetero_gnn_layer(g, g.features, HeteroLayerParams({"r": W @ W_edge}, np.zeros((d, d))))
    assert np.max(np.abs(plain - het)) <= 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng)
    d = g.features.shape[1]
    perm = rng.permutation(g.n_nodes)
    gp = g.relabel(perm)
    Hp = np.empty_like(g.features)
    Hp[perm] = g.features
    hp = HeteroLayerParams({r: rng.normal(size=(d, d)) for r in RELATIONS}, rng.normal(size=(d, d)))
    out = hetero_gnn_layer(g, g.features, hp)
    assert np.allclose(hetero_gnn_layer(gp, Hp, hp)[perm], out, atol=1e-12)
    p = GnnLayerParams(rng.normal(size=(d, d)), rng.normal(size=d), rng.normal(size=(d, d)))
    assert np.allclose(gnn_layer(gp, Hp, p)[perm], gnn_layer(g, g.features, p), atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_neighbor_duplication_invariance(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng)
    d = g.features.shape[1]
    hp = HeteroLayerParams({r: rng.normal(size=(d, d)) for r in RELATIONS}, rng.normal(size=(d, d)))
    g2 = duplicate_neighbors(g)
    out = hetero_gnn_layer(g, g.features, hp)
    out2 = hetero_gnn_layer(g2, g2.features, hp)[:g.n_nodes]
    assert np.allclose(out, out2, atol=1e-12)


def test_graph_validation():
    with pytest.raises(ValueError, match="duplicate edge"):
        line_graph([[0.0], [1.0]], [("r", 0, 1), ("r", 0, 1)])
    with pytest.raises(ValueError, match="missing"):
        HeteroGraph(["a"], ["ev"], [[0.0]], [("r", "a", "b")], ("r",))
    with pytest.raises(ValueError, match="unknown relation"):
        HeteroGraph(["a"], ["ev"], [[0.0]], [("x", "a", "a")], ("r",))


def test_edge_list_round_trip():
    g = random_graph(np.random.default_rng(3))
    triples = parse_edge_list(g.edge_list())
    assert [tuple(t) for t in triples] == [(g.relations[r], g.node_ids[s], g.node_ids[d])
                                           for r, s, d in g.edges]


def world_graph(n_evs=10, n_stations=3, n_transformers=1, radius=3.0, seed=0):
    w = ChargingWorld(ScenarioConfig(n_evs=n_evs, n_stations=n_stations,
                                     n_transformers=n_transformers, near_radius_km=radius))
    w.reset(seed)
    return w


def test_build_graph_static_edges_only():
    w = world_graph(radius=0.0)
    g = w.state.graph
    assert g.count("plugged_into") == 0 and g.count("near") == 0
    assert g.count("feeds") == 3 and g.count("operated_by") == 3


def test_build_graph_plugged_edge():
    w = world_graph(radius=0.0)
    plugged = np.full(10, -1)
    plugged[4] = 2
    g = build_graph(w.topology, w.ev_pos, plugged, np.ones(10, bool), w.node_features())
    assert g.count("plugged_into") == 1
    r, s, d = g.edges[g.edges[:, 0] == RELATIONS.index("plugged_into")][0]
    assert (g.node_ids[s], g.node_ids[d]) == ("ev4", "charger2")


def test_paper_scale_feeds_edges():
    cfg = ScenarioConfig.paper()
    w = ChargingWorld(cfg)
    w.reset(0)
    assert w.state.graph.count("feeds") == 45
    assert w.state.graph.n_nodes == 250 + 45 + 12 + cfg.n_operators


def test_near_edges_symmetric():
    g = world_graph(radius=3.0).state.graph
    near = {(s, d) for r, s, d in g.edges if r == RELATIONS.index("near")}
    assert near and all((d, s) in near for s, d in near)


def test_batch_adjacency_matches_per_graph():
    rng = np.random.default_rng(1)
    base = random_graph(rng)
    graphs = [base, HeteroGraph.from_arrays(base.node_ids, base.node_types, base.features, base.edges[:2])]
    A = batch_adjacency(graphs)
    for b, g in enumerate(graphs):
        assert np.array_equal(A[b], g.adjacency())
    rows = A.sum(axis=-1)
    assert np.all((np.abs(rows - 1) < 1e-12) | (rows == 0))


@pytest.mark.parametrize("seed", range(5))
def test_layer_backward_finite_differences(seed):
    rng = np.random.default_rng(seed)
    B, N, R, d_in, d_out = 2, 5, 3, 3, 4
    A = (rng.random((B, R, N, N)) < 0.4).astype(float)
    deg = A.sum(-1, keepdims=True)
    A = np.divide(A, deg, out=np.zeros_like(A), where=deg > 0)
    H = rng.normal(size=(B, N, d_in))
    G = rng.normal(size=(B, N, d_out))
    layer = HeteroGnnLayer(rng.normal(size=(R, d_out, d_in)), rng.normal(size=(d_out, d_in)))
    layer.forward(A, H)
    dH = layer.backward(G)
    params = dict(layer.params(), H=H)
    grads = dict(layer.grads(), H=dH)
    assert fd_check(lambda: float(np.sum(layer.forward(A, H) * G)), params, grads) < 1e-4

    Am = A.sum(axis=1)
    plain = GnnLayer(rng.normal(size=(d_out, d_out)), rng.normal(size=d_out), rng.normal(size=(d_out, d_in)))
    plain.forward(Am, H)
    dH = plain.backward(G)
    assert fd_check(lambda: float(np.sum(plain.forward(Am, H) * G)),
                    dict(plain.params(), H=H), dict(plain.grads(), H=dH)) < 1e-4


def test_graph_encoder_backward():
    rng = np.random.default_rng(7)
    w = world_graph()
    g = w.state.graph
    A = batch_adjacency([g])
    X = g.features[None]
    enc = GraphEncoder.init(X.shape[-1], 4, 2, len(RELATIONS), rng)
    G = rng.normal(size=(1, 4))
    enc.forward(A, X)
    enc.backward(G)
    params = {"in.W": enc.input_layer.weight, "in.b": enc.input_layer.bias}
    grads = {"in.W": enc.input_layer.grad_weight, "in.b": enc.input_layer.grad_bias}
    for l, layer in enumerate(enc.layers):
        params.update({f"{l}.{k}": v for k, v in layer.params().items()})
        grads.update({f"{l}.{k}": v for k, v in layer.grads().items()})
    assert fd_check(lambda: float(np.sum(enc.forward(A, X) * G)), params, grads) < 1e-4
