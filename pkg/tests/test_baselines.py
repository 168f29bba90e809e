import numpy as np
import pytest
from scipy.stats import chisquare

from camac.agent import QNetwork
from camac.baselines import (GREEDY_TEMPLATE, NO_CHARGE_TEMPLATE, BanditArmStats, UCBAgent,
                             context_bucket, dqn_baseline_policy, greedy_policy, random_policy,
                             ucb_select)
from camac.environment.state import EV_FEATURES
from camac.training import network_config
from tests.support import desk_states, small_net


def test_ucb_example():
    st = BanditArmStats(n_buckets=1, n_arms=2)
    st.counts[0] = [100, 1]
    st.means[0] = [0.5, 0.4]
    # 0.5 + sqrt(ln 101 / 100) = 0.71 against 0.4 + sqrt(ln 101) = 2.55
    assert ucb_select(0, st, 101, 1.0) == 1
    assert ucb_select(0, st, 101, 0.0) == 0


def test_ucb_unpulled_arms_first():
    st = BanditArmStats(n_buckets=1, n_arms=4)
    assert ucb_select(0, st, 0, 1.0) == 0
    st.update(0, 0, 1.0)
    assert ucb_select(0, st, 1, 1.0) == 1


def test_ucb_pulls_every_arm():
    st = BanditArmStats(n_buckets=1, n_arms=5)
    rng = np.random.default_rng(0)
    for t in range(50):
        a = ucb_select(0, st, t, 1.0)
        st.update(0, a, float(rng.random()))
    assert np.all(st.counts[0] > 0)
    assert st.total == 50


def test_bandit_running_mean():
    st = BanditArmStats(n_buckets=1, n_arms=1)
    for r in (1.0, 2.0, 6.0):
        st.update(0, 0, r)
    assert st.means[0, 0] == pytest.approx(3.0, abs=1e-15)


def test_ucb_agent_uses_context_bucket():
    s = desk_states(0, 1)[0]
    agent = UCBAgent(c=1.0)
    a = agent.act(s, 0)
    agent.observe(s, a, 1.0)
    assert agent.stats.counts[context_bucket(s), a] == 1
    assert 0 <= context_bucket(s) < 8


def test_greedy_policy_examples():
    s = desk_states(0, 1)[0]
    ev = s.base.reshape(-1, len(EV_FEATURES)).copy()
    ev[:, EV_FEATURES.index("soc")] = 0.9
    ev[:, EV_FEATURES.index("plugged")] = 0.0
    ev[:, EV_FEATURES.index("departed")] = 0.0
    full = type(s)(ev.reshape(-1), s.context, s.t, s.graph, s.info)
    assert greedy_policy(full) == NO_CHARGE_TEMPLATE
    ev[3, EV_FEATURES.index("soc")] = 0.2
    low = type(s)(ev.reshape(-1), s.context, s.t, s.graph, s.info)
    assert greedy_policy(low) == GREEDY_TEMPLATE
    # a departed EV no longer counts
    ev[3, EV_FEATURES.index("departed")] = 1.0
    gone = type(s)(ev.reshape(-1), s.context, s.t, s.graph, s.info)
    assert greedy_policy(gone) == NO_CHARGE_TEMPLATE


def test_random_policy_uniform():
    rng = np.random.default_rng(0)
    counts = np.bincount([random_policy(rng) for _ in range(12_000)], minlength=24)
    assert chisquare(counts).pvalue > 1e-3


def test_dqn_baseline_is_context_blind():
    states = desk_states(2, 3)
    net = QNetwork(network_config("dqn", states[0].n_base, 24, d_trunk=8, d_hidden=4))
    for s in states:
        blank = s.replace_context(np.zeros_like(s.context))
        assert dqn_baseline_policy(s, net, 0.0, None) == dqn_baseline_policy(blank, net, 0.0, None)
    with pytest.raises(ValueError):
        dqn_baseline_policy(states[0], small_net(states), 0.0, None)
