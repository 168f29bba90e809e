"""Comparison policies: context-blind DQN, UCB contextual bandit, greedy and random."""

from dataclasses import dataclass, field

import numpy as np

from .agent import greedy_index, select_action
from .environment.state import EV_FEATURES, FEATURE_NAMES
from .templates import N_TEMPLATES, find_template

GREEDY_TEMPLATE = find_template("threshold", 0.5, "nearest", 1)
NO_CHARGE_TEMPLATE = find_template("none", None, "nearest", 1)
GREEDY_THRESHOLD = 0.5

_PEAK = FEATURE_NAMES.index("peak_period")
_RENEWABLE = FEATURE_NAMES.index("renewable_share")
_CONGESTION = FEATURE_NAMES.index("congestion")
N_BUCKETS = 8

# reports list these with quoted source numbers, not reproduced
PLACEHOLDER_ALGORITHMS = ("ddpg", "a3c", "ppo")


def dqn_baseline_policy(state, params, epsilon, rng):
    """Epsilon-greedy on a single-head network that only reads the base block."""
    if params.config.use_attention or params.config.use_graph or params.config.use_latent:
        raise ValueError("the DQN baseline network must read only the base block")
    return select_action(state, params, np.ones(1), epsilon, rng)[0]


def context_bucket(state, threshold=0.5):
    """(peak, renewable high, congestion high) as an integer in [0, 8)."""
    c = state.context
    return (4 * int(c[_PEAK] >= threshold) + 2 * int(c[_RENEWABLE] >= threshold)
            + int(c[_CONGESTION] >= threshold))


@dataclass
class BanditArmStats:
    n_buckets: int = N_BUCKETS
    n_arms: int = N_TEMPLATES
    counts: np.ndarray = None
    means: np.ndarray = None
    total: int = 0

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.n_buckets, self.n_arms), dtype=np.int64)
        if self.means is None:
            self.means = np.zeros((self.n_buckets, self.n_arms))

    def update(self, bucket, arm, reward):
        self.counts[bucket, arm] += 1
        self.means[bucket, arm] += (reward - self.means[bucket, arm]) / self.counts[bucket, arm]
        self.total += 1


def ucb_select(bucket, stats, t, c):
    """Unpulled arms first (lowest index), else argmax of ``mean + c sqrt(ln t / n)``."""
    n = stats.counts[bucket]
    unpulled = np.flatnonzero(n == 0)
    if len(unpulled):
        return int(unpulled[0])
    bonus = c * np.sqrt(np.log(max(t, 1)) / n) if c else 0.0
    return greedy_index(stats.means[bucket] + bonus)


def greedy_policy(state):
    """Uncoordinated reference: EVs below half charge at the nearest free station, mid tier.

    Returns the no-charge template when no active EV is below the threshold
    and none is plugged in or queued.
    """
    ev = state.base.reshape(-1, len(EV_FEATURES))
    active = ev[:, EV_FEATURES.index("departed")] < 0.5
    low = ev[:, EV_FEATURES.index("soc")] < GREEDY_THRESHOLD
    engaged = ev[:, EV_FEATURES.index("plugged")] > 0
    if np.any(active & (low | engaged)):
        return GREEDY_TEMPLATE
    return NO_CHARGE_TEMPLATE


def random_policy(rng, n_templates=N_TEMPLATES):
    return int(rng.integers(n_templates))


# -------------------------------------------------------- rollout adapters
@dataclass
class GreedyAgent:
    name: str = "greedy"

    def act(self, state, episode):
        return greedy_policy(state)

    def observe(self, state, action, r_coord):
        pass


@dataclass
class RandomAgent:
    rng: np.random.Generator
    n_templates: int = N_TEMPLATES
    name: str = "random"

    def act(self, state, episode):
        return random_policy(self.rng, self.n_templates)

    def observe(self, state, action, r_coord):
        pass


@dataclass
class UCBAgent:
    c: float = 1.0
    stats: BanditArmStats = field(default_factory=BanditArmStats)
    name: str = "ucb"

    def act(self, state, episode):
        b = context_bucket(state)
        self._bucket = b
        return ucb_select(b, self.stats, self.stats.total, self.c)

    def observe(self, state, action, r_coord):
        self.stats.update(self._bucket, action, r_coord)
