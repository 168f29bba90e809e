"""Heterogeneous charging-infrastructure graph and message-passing layers.

Nodes are EVs, chargers, transformers and charge-point operators. Edges are
typed by relation and directed ``src -> dst``: a node aggregates messages
from the sources of its incoming edges.

Layers work on dense per-relation adjacency tensors so that a mini-batch of
graphs with a common node set runs as a few einsums.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import AffineLayer, relu

NODE_TYPES = ("ev", "charger", "transformer", "operator")
RELATIONS = ("plugged_into", "feeds", "operated_by", "near")
NODE_FEATURES = 8  # 4-way type one-hot + 4 type-specific slots


class HeteroGraph:
    """Typed nodes and typed directed edges.

    Parameters
    ----------
    node_ids : sequence of hashable
    node_types : sequence of str, one of ``NODE_TYPES``
    features : (N, F) array
    edges : iterable of (relation, src_id, dst_id)
    relations : tuple of str, the relation vocabulary
    """

    def __init__(self, node_ids, node_types, features, edges=(), relations=RELATIONS):
        self.node_ids = list(node_ids)
        self.relations = tuple(relations)
        self._index = {nid: i for i, nid in enumerate(self.node_ids)}
        if len(self._index) != len(self.node_ids):
            raise ValueError("duplicate node ids")
        self.node_types = np.array([NODE_TYPES.index(t) for t in node_types], dtype=np.int64)
        self.features = np.asarray(features, dtype=np.float64).reshape(len(self.node_ids), -1)
        rows = []
        seen = set()
        for rel, src, dst in edges:
            if rel not in self.relations:
                raise ValueError(f"unknown relation {rel!r}")
            if src not in self._index or dst not in self._index:
                raise ValueError(f"edge endpoint missing: {src!r} -> {dst!r}")
            key = (self.relations.index(rel), self._index[src], self._index[dst])
            if key in seen:
                raise ValueError(f"duplicate edge {(rel, src, dst)!r}")
            seen.add(key)
            rows.append(key)
        self.edges = np.array(rows, dtype=np.int64).reshape(-1, 3)
        self._adj = None

    @classmethod
    def from_arrays(cls, node_ids, node_types, features, edge_array, relations=RELATIONS):
        """Trusted constructor used by the simulator; skips per-edge validation."""
        g = cls.__new__(cls)
        g.node_ids = list(node_ids)
        g.relations = tuple(relations)
        g._index = {nid: i for i, nid in enumerate(g.node_ids)}
        g.node_types = np.asarray(node_types, dtype=np.int64)
        g.features = np.asarray(features, dtype=np.float64)
        g.edges = np.asarray(edge_array, dtype=np.int64).reshape(-1, 3)
        g._adj = None
        return g

    @property
    def n_nodes(self):
        return len(self.node_ids)

    def index(self, node):
        try:
            return self._index[node]
        except KeyError:
            raise KeyError(f"unknown node {node!r}") from None

    def neighbors(self, node, relation=None):
        """Indices of sources with an edge into ``node`` (all relations merged when None)."""
        v = self.index(node)
        mask = self.edges[:, 2] == v
        if relation is not None:
            mask &= self.edges[:, 0] == self.relations.index(relation)
        return sorted(set(self.edges[mask, 1].tolist()))

    def count(self, relation):
        return int(np.sum(self.edges[:, 0] == self.relations.index(relation)))

    def adjacency(self):
        """Row-normalised per-relation adjacency, shape (R, N, N).

        ``A[r, v, u] = 1 / |N_r(v)|`` for each incoming ``u -> v`` edge of relation r.
        """
        n = self.n_nodes
        A = np.zeros((len(self.relations), n, n))
        if len(self.edges):
            r, s, d = self.edges.T
            A[r, d, s] = 1.0
            deg = A.sum(axis=2, keepdims=True)
            A = np.divide(A, deg, out=np.zeros_like(A), where=deg > 0)
        return A

    def cached_adjacency(self):
        """Read-only :meth:`adjacency`, computed on first use; graphs are not mutated after construction."""
        if self._adj is None:
            self._adj = self.adjacency()
            self._adj.flags.writeable = False
        return self._adj

    def merged_adjacency(self):
        """Row-normalised adjacency over the union of all relations, shape (N, N)."""
        n = self.n_nodes
        A = np.zeros((n, n))
        if len(self.edges):
            A[self.edges[:, 2], self.edges[:, 1]] = 1.0
            deg = A.sum(axis=1, keepdims=True)
            A = np.divide(A, deg, out=np.zeros_like(A), where=deg > 0)
        return A

    def edge_list(self):
        """Debug dump: one ``relation,src,dst`` line per edge."""
        lines = [f"{self.relations[r]},{self.node_ids[s]},{self.node_ids[d]}" for r, s, d in self.edges]
        return "\n".join(lines) + ("\n" if lines else "")

    def relabel(self, perm):
        """Graph with node ``i`` moved to position ``perm[i]`` (ids kept)."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        ids = [self.node_ids[i] for i in inv]
        edges = self.edges.copy()
        if len(edges):
            edges[:, 1] = perm[edges[:, 1]]
            edges[:, 2] = perm[edges[:, 2]]
        return HeteroGraph.from_arrays(ids, self.node_types[inv], self.features[inv], edges,
                                       self.relations)


def parse_edge_list(text):
    """Inverse of :meth:`HeteroGraph.edge_list` (returns ``(relation, src, dst)`` triples)."""
    out = []
    for line in text.splitlines():
        line = line.strip()
        if line:
            rel, src, dst = line.split(",")
            out.append((rel, src, dst))
    return out


def aggregate_neighbors(graph, node, embeddings, W_edge):
    """Mean of ``W_edge @ h_u`` over incoming neighbours; zero vector when isolated."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    W_edge = np.asarray(W_edge, dtype=np.float64)
    nbrs = graph.neighbors(node)
    if not nbrs:
        return np.zeros(W_edge.shape[0])
    return np.mean(embeddings[nbrs] @ W_edge.T, axis=0)


@dataclass
class GnnLayerParams:
    W: np.ndarray
    b: np.ndarray
    W_edge: np.ndarray


@dataclass
class HeteroLayerParams:
    W_rel: dict
    W_self: np.ndarray


def gnn_layer(graph, embeddings, params):
    """One mean-aggregation message-passing layer with rectifier activation."""
    H = np.asarray(embeddings, dtype=np.float64)
    if H.shape[1] != params.W_edge.shape[1]:
        raise ShapeError(f"embedding width {H.shape[1]} != W_edge input {params.W_edge.shape[1]}")
    layer = GnnLayer(params.W, params.b, params.W_edge)
    return layer.forward(graph.merged_adjacency(), H)


def hetero_gnn_layer(graph, embeddings, params):
    """Relation-specific normalised sums plus a self term, rectifier activation."""
    missing = [r for r in graph.relations if r not in params.W_rel]
    if missing:
        raise ConfigError([f"W_rel: missing weight for relation {r!r}" for r in missing])
    H = np.asarray(embeddings, dtype=np.float64)
    W_stack = np.stack([params.W_rel[r] for r in graph.relations])
    layer = HeteroGnnLayer(W_stack, params.W_self)
    return layer.forward(graph.adjacency(), H)


class GnnLayer:
    """Batched form of :func:`gnn_layer` with backward.

    ``A``: (..., N, N) merged normalised adjacency; ``H``: (..., N, d_in).
    """

    def __init__(self, W, b, W_edge):
        self.W = np.asarray(W, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.W_edge = np.asarray(W_edge, dtype=np.float64)
        self._cache = None

    def params(self):
        return {"W": self.W, "b": self.b, "W_edge": self.W_edge}

    def forward(self, A, H):
        if H.shape[-1] != self.W_edge.shape[1]:
            raise ShapeError(f"embedding width {H.shape[-1]} != {self.W_edge.shape[1]}")
        AH = A @ H
        M = AH @ self.W_edge.T
        pre = M @ self.W.T + self.b
        self._cache = (A, AH, M, pre)
        return relu(pre)

    def backward(self, grad):
        A, AH, M, pre = self._cache
        dpre = grad * (pre > 0)
        d = pre.shape[-1]
        self.grad_W = dpre.reshape(-1, d).T @ M.reshape(-1, M.shape[-1])
        self.grad_b = dpre.reshape(-1, d).sum(axis=0)
        dM = dpre @ self.W
        self.grad_W_edge = dM.reshape(-1, dM.shape[-1]).T @ AH.reshape(-1, AH.shape[-1])
        dAH = dM @ self.W_edge
        return np.swapaxes(A, -1, -2) @ dAH

    def grads(self):
        return {"W": self.grad_W, "b": self.grad_b, "W_edge": self.grad_W_edge}


class HeteroGnnLayer:
    """Batched relational layer.

    ``W_rel``: (R, d_out, d_in); ``A``: (..., R, N, N); ``H``: (..., N, d_in).
    """

    def __init__(self, W_rel, W_self):
        self.W_rel = np.asarray(W_rel, dtype=np.float64)
        self.W_self = np.asarray(W_self, dtype=np.float64)
        self._cache = None

    def params(self):
        return {"W_rel": self.W_rel, "W_self": self.W_self}

    def _stacked(self):
        R, d_out, d_in = self.W_rel.shape
        return np.transpose(self.W_rel, (0, 2, 1)).reshape(R * d_in, d_out)

    def forward(self, A, H):
        if H.shape[-1] != self.W_self.shape[1]:
            raise ShapeError(f"embedding width {H.shape[-1]} != {self.W_self.shape[1]}")
        if A.shape[-3] != self.W_rel.shape[0]:
            raise ConfigError(f"adjacency has {A.shape[-3]} relations, weights have {self.W_rel.shape[0]}")
        R, N = A.shape[-3], A.shape[-1]
        Af = A.reshape(A.shape[:-3] + (R * N, N))
        AH = (Af @ H).reshape(A.shape[:-3] + (R, N, -1))  # (..., R, N, d_in)
        AHc = np.swapaxes(AH, -3, -2)                    # (..., N, R, d_in)
        AHc = AHc.reshape(AHc.shape[:-2] + (-1,))        # (..., N, R*d_in)
        pre = AHc @ self._stacked() + H @ self.W_self.T
        self._cache = (A, H, AHc, pre)
        return relu(pre)

    def backward(self, grad):
        A, H, AHc, pre = self._cache
        R, d_out, d_in = self.W_rel.shape
        dpre = grad * (pre > 0)
        d2 = dpre.reshape(-1, d_out)
        gW = AHc.reshape(-1, R * d_in).T @ d2            # (R*d_in, d_out)
        self.grad_W_rel = np.transpose(gW.reshape(R, d_in, d_out), (0, 2, 1))
        self.grad_W_self = d2.T @ H.reshape(-1, H.shape[-1])
        dAH = (dpre @ self._stacked().T).reshape(dpre.shape[:-1] + (R, d_in))
        dAH = np.swapaxes(dAH, -3, -2)                   # (..., R, N, d_in)
        N = A.shape[-1]
        Af = A.reshape(A.shape[:-3] + (R * N, N))
        dH = dpre @ self.W_self + np.swapaxes(Af, -1, -2) @ dAH.reshape(dAH.shape[:-3] + (R * N, d_in))
        return dH

    def grads(self):
        return {"W_rel": self.grad_W_rel, "W_self": self.grad_W_self}


@dataclass
class Topology:
    """Static wiring of one scenario."""

    n_evs: int
    station_pos: np.ndarray
    station_transformer: np.ndarray
    station_operator: np.ndarray
    n_transformers: int
    n_operators: int
    radius_km: float = 3.0

    @property
    def n_stations(self):
        return len(self.station_pos)

    def node_ids(self):
        return ([f"ev{i}" for i in range(self.n_evs)]
                + [f"charger{j}" for j in range(self.n_stations)]
                + [f"transformer{k}" for k in range(self.n_transformers)]
                + [f"operator{o}" for o in range(self.n_operators)])

    def node_types(self):
        return np.array([0] * self.n_evs + [1] * self.n_stations
                        + [2] * self.n_transformers + [3] * self.n_operators, dtype=np.int64)

    def static_edges(self):
        n_ev, n_st = self.n_evs, self.n_stations
        ch = n_ev + np.arange(n_st)
        feeds = np.stack([np.full(n_st, 1), ch, n_ev + n_st + self.station_transformer], axis=1)
        ops = np.stack([np.full(n_st, 2), ch,
                        n_ev + n_st + self.n_transformers + self.station_operator], axis=1)
        return np.concatenate([feeds, ops]).astype(np.int64)


def build_graph(topology, ev_pos, ev_plugged, ev_active, features):
    """Graph for one time step.

    ``ev_plugged[i]`` is the station index or -1; ``ev_active`` masks EVs still
    in the scenario. ``near`` edges run both ways between active EVs and
    chargers within ``topology.radius_km``.
    """
    n_ev = topology.n_evs
    edges = [topology.static_edges()]
    plugged = np.flatnonzero((np.asarray(ev_plugged) >= 0) & ev_active)
    if len(plugged):
        edges.append(np.stack([np.zeros(len(plugged), dtype=np.int64), plugged,
                               n_ev + np.asarray(ev_plugged)[plugged]], axis=1))
    if topology.radius_km > 0 and n_ev:
        d = np.linalg.norm(ev_pos[:, None, :] - topology.station_pos[None, :, :], axis=2)
        ii, jj = np.nonzero((d <= topology.radius_km) & np.asarray(ev_active)[:, None])
        if len(ii):
            near = np.full(len(ii), 3)
            edges.append(np.stack([near, ii, n_ev + jj], axis=1))
            edges.append(np.stack([near, n_ev + jj, ii], axis=1))
    edge_array = np.concatenate(edges).astype(np.int64)
    return HeteroGraph.from_arrays(topology.node_ids(), topology.node_types(), features, edge_array)


def batch_adjacency(graphs):
    """Stack per-relation normalised adjacency for graphs sharing a node set: (B, R, N, N)."""
    n = {g.n_nodes for g in graphs}
    if len(n) != 1:
        raise ShapeError(f"graphs in a batch must share a node count, got {sorted(n)}")
    return np.stack([g.cached_adjacency() for g in graphs])


@dataclass
class GraphEncoder:
    """Input projection + stacked relational layers + mean pooling over nodes."""

    input_layer: AffineLayer
    layers: list

    @classmethod
    def init(cls, n_features, d_h, n_layers, n_relations, rng):
        inp = AffineLayer.init(n_features, d_h, rng)
        scale = np.sqrt(3.0 / d_h)
        layers = [HeteroGnnLayer(rng.uniform(-scale, scale, (n_relations, d_h, d_h)),
                                 rng.uniform(-scale, scale, (d_h, d_h)))
                  for _ in range(n_layers)]
        return cls(inp, layers)

    def forward(self, A, X):
        pre = self.input_layer.forward(X)
        self._pre = pre
        H = relu(pre)
        for layer in self.layers:
            H = layer.forward(A, H)
        self._n = H.shape[-2]
        return H.mean(axis=-2)

    def backward(self, grad_pooled):
        g = np.repeat(grad_pooled[..., None, :] / self._n, self._n, axis=-2)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        g = g * (self._pre > 0)
        self.input_layer.backward(g)
