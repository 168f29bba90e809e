"""Shared builders for the test suite."""

from contextlib import contextmanager

import numpy as np

import camac.agent
import camac.context
import camac.graph
from camac.agent import QNetConfig, QNetwork
from camac.context import ContextEncoder
from camac.environment import CAP_LEVELS, DEFER, JointAction
from camac.environment.config import ScenarioConfig
from camac.graph import RELATIONS, HeteroGraph
from camac.numerics import relative_error
from camac.training import TemplateEnv, Transition

PAPER_W = np.array([0.25, 0.20, 0.20, 0.20, 0.15])


def desk_states(seed=0, n=8, templates=None, config=None):
    """Consecutive desk-profile states under a seeded or given template sequence."""
    env = TemplateEnv(config or ScenarioConfig.desk(), record=True)
    rng = np.random.default_rng(seed)
    s = env.reset(seed)
    out = [s]
    for k in range(n - 1):
        a = templates[k % len(templates)] if templates is not None else int(rng.integers(24))
        s, _, _ = env.step(a)
        out.append(s)
    return out


def small_net(states, seed=0, **overrides):
    """A narrow network over the full input pathway set, for gradient checks."""
    s = states[0]
    enc = ContextEncoder.init(s.n_ctx, 4, np.random.default_rng(seed + 1000), hidden=6)
    cfg = QNetConfig(n_base=s.n_base, d_z=4, attn_heads=2, d_k=3, d_v=3, d_model=4, d_h=4,
                     gnn_layers=2, d_trunk=6, d_hidden=5, d_action=3, seed=seed)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return QNetwork(cfg, enc)


def transitions(states, rng, n_heads=5, w=PAPER_W):
    out = []
    for k in range(len(states) - 1):
        R = rng.normal(size=n_heads)
        r = float(R @ w) if n_heads == 5 else float(R[0])
        out.append(Transition(states[k], int(rng.integers(24)), r, states[k + 1],
                              bool(k == len(states) - 2), R, np.asarray(w)))
    return out


def fd_check(loss, params, grads, step=1e-5, max_coords=None, rng=None, signs=None, skipped=None):
    """Worst relative error between ``grads`` and central differences of ``loss()``.

    ``params`` maps names to live arrays that ``loss`` reads. With
    ``max_coords`` only that many coordinates per array are probed. With
    ``signs`` (the list filled by :func:`relu_signs`) a probe whose step moves
    any relu input across zero is skipped, as the loss has a kink there; the
    skipped ``name[index]`` labels are appended to ``skipped``.
    """
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        assert np.shares_memory(flat, p), name
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, max_coords, replace=False)
        g = np.asarray(grads[name]).reshape(-1)
        for i in idx:
            orig = flat[i]
            fp, sp = _probe(loss, flat, i, orig + step, signs)
            fm, sm = _probe(loss, flat, i, orig - step, signs)
            flat[i] = orig
            if signs is not None and not _same(sp, sm):
                if skipped is not None:
                    skipped.append(f"{name}[{i}]")
                continue
            worst = max(worst, float(relative_error(g[i], (fp - fm) / (2 * step))))
    return worst


def _probe(loss, flat, i, x, signs):
    flat[i] = x
    if signs is not None:
        signs.clear()
    value = loss()
    return value, None if signs is None else [a.copy() for a in signs]


def _same(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


@contextmanager
def relu_signs():
    """Record ``x > 0`` for every relu input evaluated by the network modules."""
    log = []
    mods = (camac.agent, camac.context, camac.graph)
    saved = [m.relu for m in mods]

    def relu(x):
        log.append(np.asarray(x) > 0)
        return np.maximum(x, 0.0)

    for m in mods:
        m.relu = relu
    try:
        yield log
    finally:
        for m, f in zip(mods, saved):
            m.relu = f


def random_action(world, rng):
    cfg = world.config
    ev = rng.integers(DEFER, cfg.n_stations, cfg.n_evs)
    fleet = np.where(world.ev_class == 2, rng.integers(0, 3, cfg.n_evs), -1)
    return JointAction(ev=ev, grid=rng.choice(CAP_LEVELS, cfg.n_transformers),
                       station=rng.integers(0, 3, cfg.n_stations), fleet=fleet,
                       env=int(rng.integers(0, 3)))


def energy_residual(world):
    """kWh imbalance between EV-side and station-side metering for the last step."""
    o = world.last_outcome
    dsoc = (world.ev_soc - o.soc_before) * world.ev_capacity
    ev_side = (dsoc + o.ev_drain_kwh) / world.config.eta_chg
    return max(abs(ev_side.sum() - o.station_metered_kwh.sum()),
               abs(o.ev_metered_kwh.sum() - o.station_metered_kwh.sum()))


def random_graph(rng, n_max=7, relations=RELATIONS, d=3):
    n = int(rng.integers(1, n_max + 1))
    ids = [f"v{i}" for i in range(n)]
    types = [["ev", "charger", "transformer", "operator"][k] for k in rng.integers(0, 4, n)]
    pairs = [(r, s, t) for r in relations for s in range(n) for t in range(n)]
    keep = rng.random(len(pairs)) < 0.3
    edges = [(r, ids[s], ids[t]) for (r, s, t), k in zip(pairs, keep) if k]
    return HeteroGraph(ids, types, rng.normal(size=(n, d)), edges, relations)


def duplicate_neighbors(g):
    """Twin every node and copy each edge from the twin, doubling every neighbourhood."""
    n = g.n_nodes
    ids = g.node_ids + [f"{i}'" for i in g.node_ids]
    types = [["ev", "charger", "transformer", "operator"][t] for t in np.tile(g.node_types, 2)]
    edges = []
    for r, s, d in g.edges:
        rel = g.relations[r]
        edges.append((rel, ids[s], ids[d]))
        edges.append((rel, ids[s + n], ids[d]))
    return HeteroGraph(ids, types, np.vstack([g.features, g.features]), edges, g.relations)


def toy_states(env):
    """The two one-hot states of a :class:`ToyMDP`, in state order."""
    out = []
    for s in (0, 1):
        env.s, env.t = s, 0
        out.append(env._state())
    return out
