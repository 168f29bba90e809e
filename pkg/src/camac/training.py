"""Training loop: replay, target sync, weight adaptation and consensus."""

import csv
import logging
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .agent import (Adam, ExplorationParams, QNetConfig, QNetwork, SGD, batch_update, epsilon_ctx,
                    greedy_index, select_action)
from .context import AdaptationParams, ContextEncoder, adaptation_factor, encoder_update
from .environment.config import PAPER_WEIGHTS, ScenarioConfig, total_reward
from .environment.state import N_CONTEXT, ContextState
from .environment.world import ChargingWorld
from .errors import ConfigError, EvaluationError, ReplayBufferError
from .metrics import StepRecord
from .templates import N_TEMPLATES, expand

# single-head learners; "gnn-dqn" is the in-repo stand-in for a GNN baseline
SINGLE_HEAD = ("dqn", "gnn-dqn")
LEARNERS = ("cama",) + SINGLE_HEAD

log = logging.getLogger(__name__)

TRACE_HEADER = ("episode", "total_reward", "r_ev", "r_grid", "r_station", "r_fleet", "r_env",
                "loss_mean", "epsilon_mean", "w1", "w2", "w3", "w4", "w5")


@dataclass
class Transition:
    state: ContextState
    action: int
    reward: float
    next_state: ContextState
    done: bool
    rewards: np.ndarray
    weights: np.ndarray


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with its own sampling stream."""

    def __init__(self, capacity, rng=None):
        if capacity < 1:
            raise ReplayBufferError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.rng = np.random.default_rng() if rng is None else rng
        self._items = []
        self._next = 0

    def __len__(self):
        return len(self._items)

    def push(self, transition):
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._next] = transition
        self._next = (self._next + 1) % self.capacity
        return self

    def sample(self, batch_size, rng=None):
        rng = self.rng if rng is None else rng
        if batch_size > len(self._items):
            raise ReplayBufferError(f"cannot sample {batch_size} from {len(self._items)} transitions")
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        return [self._items[i] for i in idx]

    def oldest_first(self):
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._next:] + self._items[:self._next]


def replay_push(buffer, transition):
    return buffer.push(transition)


def replay_sample(buffer, batch_size, rng):
    return buffer.sample(batch_size, rng)


@dataclass
class TrainerConfig:
    n_episodes: int = 150
    t_max: int = 96
    b_min: int = 512
    u_freq: int = 4
    target_sync: int = 200
    batch_size: int = 128
    lr: float = 1e-3
    encoder_lr: float = 1e-3
    gamma: float = 0.95
    eta: float = 0.1
    eps_base: float = 0.9
    decay_time: float = 0.02
    decay_complexity: float = 0.5
    eps_min: float = 0.05
    gamma_coord: float = 0.5
    capacity: int = 20000
    seed: int = 0
    weight_floor: float = 0.01
    optimizer: str = "adam"
    max_grad_norm: float = 10.0
    algorithm: str = "cama"
    d_z: int = 8
    checkpoint_every: int = 0
    initial_weights: tuple = PAPER_WEIGHTS

    def validate(self):
        issues = []
        for name in ("n_episodes", "t_max"):
            if getattr(self, name) < 0:
                issues.append(f"{name}: must be >= 0")
        for name in ("u_freq", "target_sync", "batch_size", "capacity", "d_z"):
            if getattr(self, name) < 1:
                issues.append(f"{name}: must be >= 1")
        if self.batch_size > self.b_min:
            issues.append(f"batch_size, b_min: batch_size ({self.batch_size}) must not exceed b_min ({self.b_min})")
        if self.b_min > self.capacity:
            issues.append(f"b_min, capacity: b_min ({self.b_min}) must not exceed capacity ({self.capacity})")
        if not 0.0 <= self.gamma < 1.0:
            issues.append("gamma: must be in [0, 1)")
        if not 0.0 <= self.gamma_coord <= 1.0:
            issues.append("gamma_coord: must be in [0, 1]")
        if not 0.0 <= self.eps_base <= 1.0:
            issues.append("eps_base: must be in [0, 1]")
        if not 0.0 <= self.eps_min <= 1.0:
            issues.append("eps_min: must be in [0, 1]")
        for name in ("lr", "encoder_lr", "eta", "decay_time", "decay_complexity", "max_grad_norm"):
            if not getattr(self, name) >= 0:
                issues.append(f"{name}: must be >= 0")
        if not 0.0 <= self.weight_floor < 0.2:
            issues.append("weight_floor: must be in [0, 0.2)")
        if self.optimizer not in ("adam", "sgd"):
            issues.append("optimizer: must be 'adam' or 'sgd'")
        if self.algorithm not in LEARNERS:
            issues.append(f"algorithm: must be one of {', '.join(LEARNERS)}")
        w = np.asarray(self.initial_weights, dtype=np.float64)
        if w.shape != (5,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            issues.append("initial_weights: must be 5 non-negative entries summing to 1")
        if self.checkpoint_every < 0:
            issues.append("checkpoint_every: must be >= 0")
        return issues

    def check(self):
        issues = self.validate()
        if issues:
            raise ConfigError(issues)
        return self

    def to_dict(self):
        d = asdict(self)
        d["initial_weights"] = list(self.initial_weights)
        return d

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([f"{k}: unknown trainer field" for k in unknown])
        data = dict(data)
        if "initial_weights" in data:
            data["initial_weights"] = tuple(data["initial_weights"])
        return cls(**data)

    def exploration(self):
        return ExplorationParams(self.eps_base, self.decay_time, self.decay_complexity, self.eps_min)


@dataclass
class EpisodeRecord:
    episode: int
    total_reward: float
    stakeholder_totals: np.ndarray
    steps: int
    epsilon_mean: float
    epsilon_min: float
    epsilon_max: float
    loss_mean: float
    weights: np.ndarray
    consensus_template: int = -1
    info: dict = field(default_factory=dict, compare=False)

    def row(self):
        return ([self.episode, self.total_reward] + list(self.stakeholder_totals)
                + [self.loss_mean, self.epsilon_mean] + list(self.weights))

    def same_as(self, other):
        return (self.row() == other.row() and self.steps == other.steps
                and self.consensus_template == other.consensus_template)


def adapt_weights(w, perf, eta, floor=0.0):
    """``w_i exp(eta perf_i)`` renormalised; with ``floor`` entries are clamped first."""
    w = np.asarray(w, dtype=np.float64)
    perf = np.asarray(perf, dtype=np.float64)
    if not np.all(np.isfinite(perf)):
        raise ValueError("performance must be finite")
    if eta == 0 or np.all(perf == perf[0]):
        if floor <= 0 or np.all(w >= floor):
            return w.copy()
    raw = w * np.exp(eta * perf)
    if floor > 0:
        raw = np.maximum(raw / raw.sum(), floor)
    return raw / raw.sum()


def consensus(greedy_indices, w, q_tot):
    """Weighted vote over per-head greedy templates; ties by ``q_tot`` then lower index."""
    votes = {}
    for a, wi in zip(greedy_indices, w):
        votes[int(a)] = votes.get(int(a), 0.0) + float(wi)
    best = max(votes.values())
    tied = sorted(a for a, v in votes.items() if abs(v - best) <= 1e-12)
    q_tot = np.asarray(q_tot)
    return max(tied, key=lambda a: (q_tot[a], -a))


def consensus_action(net, state, w):
    q = net.q_heads([state])[0]
    w = np.asarray(w, dtype=np.float64)
    return consensus(np.argmax(q, axis=1), w, w @ q)


def performance(stakeholder_means):
    return np.tanh(np.asarray(stakeholder_means, dtype=np.float64))


class TemplateEnv:
    """Adapter giving :class:`ChargingWorld` the template-indexed interface the trainer uses."""

    n_templates = N_TEMPLATES

    def __init__(self, config, reward_params=None, record=False):
        self.world = ChargingWorld(config, reward_params)
        self.record = record
        self.trace = []

    @property
    def horizon(self):
        return self.world.config.horizon

    def reset(self, seed):
        self.trace = []
        return self.world.reset(seed)

    def step(self, template, alpha_adapt=1.0):
        out = self.world.step(expand(template, self.world), alpha_adapt=alpha_adapt)
        if self.record:
            self.trace.append(StepRecord.from_outcome(self.world.last_outcome))
        return out


class ToyMDP:
    """Two-state, two-action deterministic MDP: action 0 stays, action 1 switches.

    Every stakeholder receives the same reward, so the coordinated reward is
    independent of the weights.
    """

    n_templates = 2
    REWARD = np.array([[0.0, 0.0], [1.0, 0.0]])

    def __init__(self, horizon=10, reward=None):
        self.horizon = horizon
        self.reward = self.REWARD if reward is None else np.asarray(reward, dtype=np.float64)

    def _state(self):
        base = np.zeros(2)
        base[self.s] = 1.0
        return ContextState(base, np.zeros(N_CONTEXT), self.t, info={"complexity": 0.0})

    def reset(self, seed):
        self.s = int(np.random.default_rng(seed).integers(2))
        self.t = 0
        return self._state()

    def step(self, action, alpha_adapt=1.0):
        r = self.reward[self.s, action]
        self.s = self.s if action == 0 else 1 - self.s
        self.t += 1
        return self._state(), np.full(5, r), False

    def q_star(self, gamma, tol=1e-10):
        """Value iteration to ``tol``."""
        nxt = np.array([[0, 1], [1, 0]])
        Q = np.zeros((2, 2))
        while True:
            Q_new = self.reward + gamma * Q.max(axis=1)[nxt]
            if np.max(np.abs(Q_new - Q)) < tol:
                return Q_new
            Q = Q_new


def derive_streams(seed):
    """Independent seed sequences for network, encoder, actions, replay and episodes."""
    return np.random.SeedSequence(seed).spawn(5)


def episode_seeds(seed, n_episodes):
    """World seeds for each episode of a run; shared by every algorithm with this seed."""
    return np.random.default_rng(derive_streams(seed)[4]).integers(0, 2 ** 31 - 1, size=max(n_episodes, 1))


def network_config(algorithm, n_base, n_templates, d_z=8, seed=0, **overrides):
    if algorithm in SINGLE_HEAD:
        cfg = QNetConfig(n_templates=n_templates, n_heads=1, n_base=n_base, use_attention=False,
                         use_graph=algorithm == "gnn-dqn", use_latent=False, use_base=True, seed=seed)
    else:
        cfg = QNetConfig(n_templates=n_templates, n_base=n_base, d_z=d_z, seed=seed)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


class Trainer:
    """Runs the training loop and keeps the bookkeeping needed to audit it.

    ``update_steps`` and ``sync_steps`` list the global step indices (1-based)
    at which gradient updates and target copies happened.
    """

    def __init__(self, env, config, net_overrides=None, adaptation=None):
        self.env = env
        self.config = config.check()
        c = config
        s_net, s_enc, s_act, s_rep, _ = derive_streams(c.seed)
        self.act_rng = np.random.default_rng(s_act)
        self.episode_seeds = episode_seeds(c.seed, c.n_episodes)
        probe = env.reset(int(self.episode_seeds[0]))
        self.n_heads = 1 if c.algorithm in SINGLE_HEAD else 5
        self.encoder = ContextEncoder.init(probe.n_ctx, c.d_z, np.random.default_rng(s_enc))
        net_seed = int(s_net.generate_state(1)[0])
        self.net = QNetwork(network_config(c.algorithm, probe.n_base, env.n_templates, c.d_z,
                                           net_seed, **(net_overrides or {})), self.encoder)
        self.target = self.net.copy()
        self.buffer = ReplayBuffer(c.capacity, np.random.default_rng(s_rep))
        self.optimizer = Adam(c.lr) if c.optimizer == "adam" else SGD(c.lr)
        self.w = np.asarray(c.initial_weights, dtype=np.float64).copy()
        self.adaptation = adaptation if adaptation is not None else AdaptationParams.zeros(probe.n_ctx)
        self.records = []
        self.update_steps = []
        self.sync_steps = []
        self.global_step = 0

    def head_weights(self):
        return self.w if self.n_heads == 5 else np.ones(1)

    def run(self, checkpoint_dir=None, progress=None):
        c = self.config
        for ep in range(c.n_episodes):
            rec = self.run_episode(ep)
            self.records.append(rec)
            if progress is not None:
                progress(rec)
            if checkpoint_dir and c.checkpoint_every and (ep + 1) % c.checkpoint_every == 0:
                self.net.save(os.path.join(checkpoint_dir, f"checkpoint_ep{ep + 1:04d}.json"))
        return self.net, self.records

    def run_episode(self, ep):
        c = self.config
        state = self.env.reset(int(self.episode_seeds[ep]))
        w_used = self.w.copy()
        totals = np.zeros(5)
        coord_total = 0.0
        eps_trace, losses = [], []
        steps = 0
        for t in range(c.t_max):
            complexity = float(state.info.get("complexity", 0.0))
            eps = epsilon_ctx(ep, complexity, c.exploration())
            eps_trace.append(eps)
            a, _ = select_action(state, self.net, self.head_weights(), eps, self.act_rng)
            alpha = adaptation_factor(state, t, self.adaptation)
            next_state, rewards, done = self.env.step(a, alpha_adapt=alpha)
            rewards = np.asarray(rewards, dtype=np.float64)
            r_coord = total_reward(rewards, self.w)
            stored = rewards if self.n_heads == 5 else np.array([r_coord])
            self.buffer.push(Transition(state, int(a), r_coord, next_state, bool(done), stored,
                                        self.w.copy()))
            totals += rewards
            coord_total += r_coord
            steps += 1
            self.global_step += 1
            g = self.global_step
            if len(self.buffer) >= c.b_min and g % c.u_freq == 0:
                batch = self.buffer.sample(c.batch_size)
                _, loss = batch_update(batch, self.net, self.target, self.head_weights(), c.gamma,
                                       c.lr, c.gamma_coord, self.optimizer, c.max_grad_norm)
                if not np.isfinite(loss):
                    raise EvaluationError(
                        f"non-finite loss {loss} at episode {ep}, step {t}, global step {g}")
                losses.append(loss)
                self.update_steps.append(g)
            if g % c.target_sync == 0:
                self.target = self.net.copy()
                self.sync_steps.append(g)
            if c.encoder_lr > 0 and self.net.config.use_latent:
                encoder_update([state], self.encoder, c.encoder_lr)
            state = next_state
            if done:
                break
        means = totals / max(steps, 1)
        self.w = adapt_weights(self.w, performance(means), c.eta, c.weight_floor)
        chosen = consensus_action(self.net, state, self.head_weights()) if self.n_heads == 5 else \
            greedy_index(self.net.q_heads([state])[0, 0])
        return EpisodeRecord(
            episode=ep, total_reward=float(coord_total), stakeholder_totals=totals, steps=steps,
            epsilon_mean=float(np.mean(eps_trace)) if eps_trace else 0.0,
            epsilon_min=float(np.min(eps_trace)) if eps_trace else 0.0,
            epsilon_max=float(np.max(eps_trace)) if eps_trace else 0.0,
            loss_mean=float(np.mean(losses)) if losses else 0.0,
            weights=self.w.copy(), consensus_template=int(chosen),
            info={"weights_used": w_used, "trace": list(getattr(self.env, "trace", ()))})


def train(env_config, trainer_config, reward_params=None, checkpoint_dir=None, progress=None,
          env=None):
    """Train on a scenario. Returns ``(network, episode records)``."""
    if env is None:
        if isinstance(env_config, ScenarioConfig):
            env_config.check()
        env = TemplateEnv(env_config, reward_params)
    trainer = Trainer(env, trainer_config)
    return trainer.run(checkpoint_dir, progress)


def write_trace(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for rec in records:
            w.writerow([repr(float(x)) if not isinstance(x, (int, np.integer)) else int(x)
                        for x in rec.row()])


def read_trace(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [{k: (int(v) if k == "episode" else float(v)) for k, v in row.items()} for row in reader]
