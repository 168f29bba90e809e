"""Multi-head context-aware Q-network, exploration schedule and TD learning.

The network maps a context state to one Q-value per stakeholder head and
action template::

    trunk  = relu(A [attention(tokens) | pooled GNN(graph) | z | base] + a)
    Q_i(a) = f_out_i(relu(f_hidden_i(trunk (+) Embed(a))))

Which input pathways are enabled is configurable, so the context-blind DQN
baseline is the same class with only the base block switched on.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .context import ContextEncoder, MultiHeadAttention
from .environment.config import check_weights
from .environment.state import TOKEN_WIDTH, tokens_from_context
from .errors import ShapeError
from .graph import NODE_FEATURES, RELATIONS, GraphEncoder, batch_adjacency
from .numerics import AffineLayer, relu

CHECKPOINT_FORMAT = "camac-qnet"
CHECKPOINT_VERSION = 1


@dataclass
class QNetConfig:
    n_templates: int = 24
    n_heads: int = 5
    n_base: int = 80
    use_attention: bool = True
    use_graph: bool = True
    use_latent: bool = True
    use_base: bool = False
    attn_heads: int = 2
    d_k: int = 8
    d_v: int = 8
    d_model: int = 16
    d_h: int = 16
    gnn_layers: int = 2
    d_z: int = 8
    d_trunk: int = 64
    d_hidden: int = 16
    d_action: int = 8
    seed: int = 0

    def input_width(self):
        return (self.d_model * self.use_attention + self.d_h * self.use_graph
                + self.d_z * self.use_latent + self.n_base * self.use_base)


@dataclass
class Inputs:
    """Batched network inputs built from context states."""

    tokens: np.ndarray = None
    nodes: np.ndarray = None
    adjacency: np.ndarray = None
    latent: np.ndarray = None
    base: np.ndarray = None

    def __len__(self):
        for x in (self.tokens, self.base, self.latent, self.nodes):
            if x is not None:
                return len(x)
        return 0


class QNetwork:
    def __init__(self, config, encoder=None):
        self.config = config
        c = config
        rng = np.random.default_rng(c.seed)
        self.attn = (MultiHeadAttention.init(TOKEN_WIDTH, c.attn_heads, c.d_k, c.d_v, c.d_model, rng)
                     if c.use_attention else None)
        self.gnn = (GraphEncoder.init(NODE_FEATURES, c.d_h, c.gnn_layers, len(RELATIONS), rng)
                    if c.use_graph else None)
        self.encoder = encoder
        self.trunk = AffineLayer.init(c.input_width(), c.d_trunk, rng)
        self.embed = rng.normal(0.0, 1.0, (c.n_templates, c.d_action))
        s = np.sqrt(6.0 / (c.d_trunk + c.d_action))
        self.Wu = rng.uniform(-s, s, (c.n_heads, c.d_hidden, c.d_trunk))
        self.We = rng.uniform(-s, s, (c.n_heads, c.d_hidden, c.d_action))
        self.bh = np.zeros((c.n_heads, c.d_hidden))
        so = np.sqrt(3.0 / c.d_hidden)
        self.wo = rng.uniform(-so, so, (c.n_heads, c.d_hidden))
        self.bo = np.zeros(c.n_heads)

    # ------------------------------------------------------------ parameters
    def params(self):
        """Flat name -> array map of every trainable array (live references)."""
        out = {}
        if self.attn is not None:
            out.update({f"attn.{k}": v for k, v in self.attn.params().items()})
        if self.gnn is not None:
            out["gnn.in.W"] = self.gnn.input_layer.weight
            out["gnn.in.b"] = self.gnn.input_layer.bias
            for l, layer in enumerate(self.gnn.layers):
                out[f"gnn.{l}.W_rel"] = layer.W_rel
                out[f"gnn.{l}.W_self"] = layer.W_self
        out["trunk.W"] = self.trunk.weight
        out["trunk.b"] = self.trunk.bias
        out["embed"] = self.embed
        out["head.Wu"] = self.Wu
        out["head.We"] = self.We
        out["head.bh"] = self.bh
        out["head.wo"] = self.wo
        out["head.bo"] = self.bo
        return out

    def grads(self):
        g = self._grads
        return {k: g[k] for k in self.params()}

    def copy(self):
        other = QNetwork.__new__(QNetwork)
        other.config = self.config
        other.encoder = self.encoder
        other.attn = (MultiHeadAttention(*(a.copy() for a in self.attn.params().values()))
                      if self.attn is not None else None)
        if self.gnn is not None:
            other.gnn = GraphEncoder(AffineLayer(self.gnn.input_layer.weight, self.gnn.input_layer.bias),
                                     [type(l)(l.W_rel.copy(), l.W_self.copy()) for l in self.gnn.layers])
        else:
            other.gnn = None
        other.trunk = AffineLayer(self.trunk.weight, self.trunk.bias)
        for name in ("embed", "Wu", "We", "bh", "wo", "bo"):
            setattr(other, name, getattr(self, name).copy())
        return other

    def load_params(self, values):
        for k, p in self.params().items():
            v = np.asarray(values[k], dtype=np.float64)
            if v.shape != p.shape:
                raise ShapeError(f"{k}: shape {v.shape} != {p.shape}")
            p[...] = v

    def flat(self):
        return np.concatenate([p.reshape(-1) for p in self.params().values()])

    def set_flat(self, vec):
        i = 0
        for p in self.params().values():
            n = p.size
            p[...] = vec[i:i + n].reshape(p.shape)
            i += n

    # ---------------------------------------------------------------- inputs
    def featurize(self, states):
        """Stack network inputs for a list of :class:`ContextState`."""
        c = self.config
        inp = Inputs()
        if c.use_attention:
            inp.tokens = tokens_from_context(np.stack([s.context for s in states]))
        if c.use_graph:
            graphs = [s.graph for s in states]
            inp.nodes = np.stack([g.features for g in graphs])
            inp.adjacency = batch_adjacency(graphs)
        if c.use_latent:
            if self.encoder is None:
                raise ShapeError("latent pathway enabled but no context encoder attached")
            inp.latent = self.encoder.encode(np.stack([s.vector() for s in states]))
        if c.use_base:
            inp.base = np.stack([s.base for s in states])
        return inp

    # --------------------------------------------------------------- forward
    def forward(self, inp, actions=None):
        """Q-values of shape (B, n_heads, n_templates).

        With ``actions`` (one template per row) only those columns are
        computed and the result has shape (B, n_heads).
        """
        c = self.config
        parts = []
        if c.use_attention:
            parts.append(self.attn.forward(inp.tokens))
        if c.use_graph:
            parts.append(self.gnn.forward(inp.adjacency, inp.nodes))
        if c.use_latent:
            parts.append(np.asarray(inp.latent, dtype=np.float64))
        if c.use_base:
            parts.append(np.asarray(inp.base, dtype=np.float64))
        x = np.concatenate(parts, axis=-1)
        tpre = self.trunk.forward(x)
        u = relu(tpre)
        H, dh = self.bh.shape
        hu = (u @ self.Wu.reshape(H * dh, -1).T).reshape(-1, H, dh)          # (B, H, d_hidden)
        if actions is None:
            he = self.embed @ np.swapaxes(self.We, 1, 2)                     # (H, K, d_hidden)
            pre = hu[:, :, None, :] + (he + self.bh[:, None, :])[None]
            hid = relu(pre)                                                  # (B, H, K, d_hidden)
            q = (hid @ self.wo[:, :, None])[..., 0] + self.bo[None, :, None]
        else:
            actions = np.asarray(actions, dtype=np.int64)
            ea = self.embed[actions]
            he = (ea @ self.We.reshape(H * dh, -1).T).reshape(-1, H, dh)
            pre = hu + he + self.bh[None]
            hid = relu(pre)                                                  # (B, H, d_hidden)
            q = np.sum(hid * self.wo[None], axis=-1) + self.bo[None]
        self._cache = (tpre, u, pre, hid, actions)
        return q

    def backward(self, dq):
        """Parameter gradients for upstream ``dq`` shaped like the last forward output."""
        c = self.config
        tpre, u, pre, hid, actions = self._cache
        g = {}
        H, dh = self.bh.shape
        B = dq.shape[0]
        if actions is None:
            g["head.wo"] = (np.swapaxes(hid, 0, 1).reshape(H, -1, dh)
                            * np.swapaxes(dq, 0, 1).reshape(H, -1, 1)).sum(axis=1)
            g["head.bo"] = dq.sum(axis=(0, 2))
            dpre = dq[..., None] * self.wo[None, :, None, :] * (pre > 0)
            g["head.bh"] = dpre.sum(axis=(0, 2))
            dhu = dpre.sum(axis=2)                                # (B, H, d_hidden)
            dhe = dpre.sum(axis=0)                                # (H, K, d_hidden)
            g["head.We"] = np.swapaxes(dhe, 1, 2) @ self.embed
            g["embed"] = np.sum(dhe @ self.We, axis=0)
        else:
            g["head.wo"] = np.sum(hid * dq[..., None], axis=0)
            g["head.bo"] = dq.sum(axis=0)
            dhu = dq[..., None] * self.wo[None] * (pre > 0)       # (B, H, d_hidden)
            g["head.bh"] = dhu.sum(axis=0)
            d2 = dhu.reshape(B, H * dh)
            g["head.We"] = (d2.T @ self.embed[actions]).reshape(H, dh, -1)
            dea = d2 @ self.We.reshape(H * dh, -1)
            g["embed"] = np.zeros_like(self.embed)
            np.add.at(g["embed"], actions, dea)
        g["head.Wu"] = (dhu.reshape(B, H * dh).T @ u).reshape(H, dh, -1)
        du = dhu.reshape(B, H * dh) @ self.Wu.reshape(H * dh, -1)
        dx = self.trunk.backward(du * (tpre > 0))[0]
        g["trunk.W"] = self.trunk.grad_weight
        g["trunk.b"] = self.trunk.grad_bias
        off = 0
        if c.use_attention:
            self.attn.backward(dx[:, off:off + c.d_model])
            g.update({f"attn.{k}": v for k, v in self.attn.grads().items()})
            off += c.d_model
        if c.use_graph:
            self.gnn.backward(dx[:, off:off + c.d_h])
            g["gnn.in.W"] = self.gnn.input_layer.grad_weight
            g["gnn.in.b"] = self.gnn.input_layer.grad_bias
            for l, layer in enumerate(self.gnn.layers):
                g[f"gnn.{l}.W_rel"] = layer.grad_W_rel
                g[f"gnn.{l}.W_self"] = layer.grad_W_self
        self._grads = g
        return g

    def q_heads(self, states):
        return self.forward(self.featurize(states))

    # ------------------------------------------------------------ checkpoint
    def to_json(self):
        blob = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "layout": {k: list(v.shape) for k, v in self.params().items()},
            "params": {k: v.reshape(-1).tolist() for k, v in self.params().items()},
        }
        if self.encoder is not None:
            enc = self.encoder.params()
            blob["encoder"] = {"layout": {k: list(v.shape) for k, v in enc.items()},
                               "params": {k: v.reshape(-1).tolist() for k, v in enc.items()}}
        return json.dumps(blob, sort_keys=True)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_json(cls, text, encoder=None):
        blob = json.loads(text)
        if blob.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a Q-network checkpoint")
        if blob.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
        if encoder is None and "encoder" in blob:
            encoder = _encoder_from_blob(blob["encoder"])
        net = cls(QNetConfig(**blob["config"]), encoder)
        values = {k: np.asarray(v).reshape(blob["layout"][k]) for k, v in blob["params"].items()}
        net.load_params(values)
        return net

    @classmethod
    def load(cls, path, encoder=None):
        with open(path) as fh:
            return cls.from_json(fh.read(), encoder)


def _encoder_from_blob(blob):
    layout, params = blob["layout"], blob["params"]

    def group(name):
        out, k = [], 0
        while f"{name}{k}.W" in layout:
            W = np.asarray(params[f"{name}{k}.W"]).reshape(layout[f"{name}{k}.W"])
            b = np.asarray(params[f"{name}{k}.b"]).reshape(layout[f"{name}{k}.b"])
            out.append(AffineLayer(W, b))
            k += 1
        return out

    return ContextEncoder(group("enc"), group("dec"))


# ---------------------------------------------------------------- operations
def q_values(state, params, head):
    """Q_i over all templates for stakeholder ``head`` (0-based)."""
    return params.q_heads([state])[0, head]


def q_total(state, params, w):
    """``sum_i w_i Q_i`` over templates."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape == (5,):
        check_weights(w)
    return np.tensordot(w, params.q_heads([state])[0], axes=1)


@dataclass
class ExplorationParams:
    eps_base: float = 0.9
    decay_time: float = 0.02
    decay_complexity: float = 0.5
    eps_min: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.eps_base <= 1.0:
            raise ValueError("eps_base must be in [0, 1]")
        if self.decay_time < 0 or self.decay_complexity < 0:
            raise ValueError("decay rates must be >= 0")


def epsilon_ctx(t, complexity, p):
    """``eps_base * exp(-decay_time * t) * exp(-decay_complexity * complexity)``, clamped."""
    eps = p.eps_base * np.exp(-p.decay_time * t) * np.exp(-p.decay_complexity * complexity)
    return float(np.clip(eps, min(p.eps_min, p.eps_base), 1.0))


def greedy_index(q):
    """Argmax with ties broken towards the lowest index."""
    return int(np.argmax(q))


def select_action(state, params, w, epsilon, rng):
    """Epsilon-greedy over templates. Returns ``(index, greedy_flag)``."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(params.config.n_templates)), False
    return greedy_index(q_total(state, params, w)), True


def td_target(r, next_state, target_params, w, gamma, done):
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must be in [0, 1)")
    if done:
        return float(r)
    return float(r + gamma * np.max(q_total(next_state, target_params, w)))


def td_error(y, q_sa):
    return float(y - q_sa)


def td_loss(params, target_params, batch, w, gamma, gamma_coord=1.0, inputs=None):
    """Loss and upstream gradient for a batch of transitions.

    The loss is the squared TD error of the executed template's ``Q_total``
    plus a ``w``-weighted per-head term. Head ``i`` regresses toward
    ``(1 - gamma_coord) R_i + gamma_coord r_coord + gamma Q_i^-(s', a*)``
    with ``a*`` the target network's greedy ``Q_total`` template. Since the
    weights sum to one, the ``Q_total`` target is the same for any
    ``gamma_coord``. The gradient is with respect to the executed templates'
    Q-values, shape (B, n_heads); ``params.backward`` turns it into
    parameter gradients.
    """
    w = np.asarray(w, dtype=np.float64)
    B = len(batch)
    inp, next_inp = inputs if inputs is not None else (
        params.featurize([tr.state for tr in batch]),
        target_params.featurize([tr.next_state for tr in batch]))
    a = np.array([tr.action for tr in batch], dtype=np.int64)
    q_sa = params.forward(inp, a)                             # (B, H)
    qn = target_params.forward(next_inp)                      # (B, H, K)
    rows = np.arange(B)
    r = np.array([tr.reward for tr in batch], dtype=np.float64)
    done = np.array([tr.done for tr in batch], dtype=np.float64)
    qn_tot = np.tensordot(w, qn, axes=([0], [1]))
    a_next = np.argmax(qn_tot, axis=1)
    boot = gamma * (1.0 - done)
    y = r + boot * qn_tot[rows, a_next]
    err = y - q_sa @ w
    R = np.stack([np.asarray(tr.rewards, dtype=np.float64) for tr in batch])
    if R.shape[1] != q_sa.shape[1]:
        R = np.repeat(r[:, None], q_sa.shape[1], axis=1)
    y_i = ((1.0 - gamma_coord) * R + gamma_coord * r[:, None]
           + boot[:, None] * qn[rows, :, a_next])
    err_i = y_i - q_sa
    loss = float(np.mean(err ** 2)) + float(np.mean(err_i ** 2 @ w))
    dq = (-2.0 / B) * (err[:, None] * w[None, :] + w[None, :] * err_i)
    return loss, dq


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for k, p in params.items():
            p -= self.lr * grads[k]


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grads(grads, max_norm):
    if not max_norm:
        return grads
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}
    return grads


def batch_update(batch, params, target_params, w, gamma, lr, gamma_coord=1.0, optimizer=None,
                 max_grad_norm=None):
    """One gradient step on the TD loss. Returns ``(params, pre-step loss)``."""
    loss, dq = td_loss(params, target_params, batch, w, gamma, gamma_coord)
    grads = clip_grads(params.backward(dq), max_grad_norm)
    if optimizer is None:
        optimizer = SGD(lr)
    if lr or not isinstance(optimizer, SGD):
        optimizer.step(params.params(), grads)
    return params, loss
