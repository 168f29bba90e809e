import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from camac.agent import (Adam, ExplorationParams, QNetConfig, QNetwork, batch_update, clip_grads,
                         epsilon_ctx, greedy_index, q_total, q_values, select_action, td_error,
                         td_loss, td_target)
from camac.errors import InvariantError, ShapeError
from camac.training import Transition
from tests.support import PAPER_W, desk_states, fd_check, small_net, transitions


@pytest.fixture(scope="module")
def states():
    return desk_states(0, 6)


def constant_net(states, values):
    """Network whose head i outputs ``values[i]`` for every template."""
    net = small_net(states)
    net.wo[:] = 0.0
    net.bo[:] = values
    return net


def test_q_values_zero_output_weights_equal_bias(states):
    net = constant_net(states, [1.0, 2.0, 3.0, 4.0, 5.0])
    for i in range(5):
        q = q_values(states[0], net, i)
        assert q.shape == (24,) and np.all(q == i + 1)


def test_q_values_ignore_scratch_info(states):
    net = small_net(states)
    s = states[2]
    other = dataclasses.replace(s, info={"note": "scratch", "x": 1e9})
    assert np.array_equal(q_values(s, net, 1), q_values(other, net, 1))


def test_q_total_examples(states):
    net = small_net(states)
    s = states[1]
    Q = net.q_heads([s])[0]
    for k in range(5):
        assert np.array_equal(q_total(s, net, np.eye(5)[k]), Q[k])
    # 1*.25 + 2*.2 + 3*.2 + 4*.2 + 5*.15
    assert np.allclose(q_total(s, constant_net(states, [1, 2, 3, 4, 5]), PAPER_W), 2.8, atol=1e-12)
    with pytest.raises(InvariantError):
        q_total(s, net, [0.5, 0.5, 0.5, 0.0, 0.0])


def test_q_total_identical_heads(states):
    net = small_net(states)
    for name in ("Wu", "We", "bh", "wo", "bo"):
        arr = getattr(net, name)
        arr[:] = arr[0]
    s = states[3]
    ref = q_values(s, net, 0)
    for w in (PAPER_W, np.eye(5)[4], np.full(5, 0.2)):
        assert np.allclose(q_total(s, net, w), ref, atol=1e-12)


_STATES = desk_states(1, 2)
_NET = small_net(_STATES, seed=3)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.01, 1), min_size=5, max_size=5), st.lists(st.floats(0.01, 1), min_size=5, max_size=5),
       st.floats(0, 1))
def test_q_total_linear_in_weights(a, b, lam):
    s = _STATES[0]
    w1, w2 = np.array(a) / sum(a), np.array(b) / sum(b)
    mix = lam * w1 + (1 - lam) * w2
    lhs = q_total(s, _NET, mix / mix.sum())
    rhs = lam * q_total(s, _NET, w1) + (1 - lam) * q_total(s, _NET, w2)
    assert np.allclose(lhs, rhs, atol=1e-9)


def test_epsilon_examples():
    p = ExplorationParams(eps_base=0.8, decay_time=0.0, decay_complexity=np.log(2), eps_min=0.05)
    assert epsilon_ctx(0, 1.0, p) == pytest.approx(0.4, abs=1e-15)
    assert epsilon_ctx(0, 0.0, p) == 0.8
    p = ExplorationParams(eps_base=0.9, decay_time=1.0, decay_complexity=0.0, eps_min=0.05)
    assert epsilon_ctx(100, 0.0, p) == 0.05
    with pytest.raises(ValueError):
        ExplorationParams(eps_base=1.5)


@given(st.integers(0, 500), st.floats(0, 1), st.floats(0, 1))
def test_epsilon_in_range_and_monotone(t, c, dc):
    p = ExplorationParams()
    e = epsilon_ctx(t, c, p)
    assert p.eps_min <= e <= 1.0
    assert epsilon_ctx(t, min(1.0, c + dc), p) <= e
    assert epsilon_ctx(t + 1, c, p) <= e


def test_greedy_ties_go_to_lowest_index():
    assert greedy_index(np.array([1.0, 3.0, 3.0])) == 1


def test_select_action_greedy_and_uniform(states):
    net = small_net(states)
    s = states[0]
    rng = np.random.default_rng(0)
    a, greedy = select_action(s, net, PAPER_W, 0.0, rng)
    assert greedy and a == int(np.argmax(q_total(s, net, PAPER_W)))
    counts = np.zeros(24)
    for _ in range(10_000):
        a, greedy = select_action(s, net, PAPER_W, 1.0, rng)
        assert not greedy
        counts[a] += 1
    assert chisquare(counts).pvalue > 1e-3
    with pytest.raises(ValueError):
        select_action(s, net, PAPER_W, 1.2, rng)


def test_select_action_invariant_to_added_constant(states):
    net = small_net(states, seed=4)
    s = states[4]
    a0, _ = select_action(s, net, PAPER_W, 0.0, None)
    net.bo[:] += 17.0
    a1, _ = select_action(s, net, PAPER_W, 0.0, None)
    assert a0 == a1


def test_td_target_examples(states):
    net = constant_net(states, [3.0] * 5)
    s = states[1]
    assert td_target(1.25, s, net, PAPER_W, 0.9, True) == 1.25
    assert td_target(1.25, s, net, PAPER_W, 0.0, False) == 1.25
    assert td_target(1.0, s, net, PAPER_W, 0.5, False) == pytest.approx(2.5, abs=1e-12)
    with pytest.raises(ValueError):
        td_target(1.0, s, net, PAPER_W, 1.0, False)
    assert td_error(2.0, 2.0) == 0.0
    assert td_error(1.0, 3.5) == -2.5


def test_td_loss_zero_when_targets_met(states):
    net = constant_net(states, [2.0] * 5)
    batch = [Transition(states[k], k, 2.0, states[k + 1], True, np.full(5, 2.0), PAPER_W)
             for k in range(3)]
    loss, dq = td_loss(net, net.copy(), batch, PAPER_W, 0.9)
    assert loss == 0.0 and not dq.any()


def test_batch_update_lr_zero_leaves_params(states):
    net = small_net(states)
    before = net.flat().copy()
    batch = transitions(states, np.random.default_rng(0))
    _, loss = batch_update(batch, net, net.copy(), PAPER_W, 0.9, lr=0.0)
    assert np.array_equal(net.flat(), before)
    assert loss > 0


def test_target_network_frozen_by_update(states):
    net = small_net(states)
    target = net.copy()
    frozen = target.flat().copy()
    batch = transitions(states, np.random.default_rng(1))
    batch_update(batch, net, target, PAPER_W, 0.9, lr=0.0, optimizer=Adam(1e-2))
    assert np.array_equal(target.flat(), frozen)
    assert not np.array_equal(net.flat(), frozen)


@pytest.mark.parametrize("seed", range(3))
def test_td_loss_gradient_finite_differences(states, seed):
    rng = np.random.default_rng(seed)
    net = small_net(states, seed=seed)
    for p in net.params().values():
        p += rng.normal(scale=0.05, size=p.shape)
    target = net.copy()
    batch = transitions(states[:5], rng)
    _, dq = td_loss(net, target, batch, PAPER_W, 0.9, gamma_coord=0.5)
    grads = {k: v.copy() for k, v in net.backward(dq).items()}
    err = fd_check(lambda: td_loss(net, target, batch, PAPER_W, 0.9, gamma_coord=0.5)[0],
                   net.params(), grads, max_coords=6, rng=rng)
    assert err < 1e-4


def test_clip_grads():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    out = clip_grads(g, 1.0)
    assert np.allclose([out["a"][0], out["b"][0]], [0.6, 0.8])
    assert clip_grads(g, 10.0) is g
    assert clip_grads(g, None) is g


def test_checkpoint_round_trip(states, tmp_path):
    net = small_net(states, seed=2)
    net.save(tmp_path / "q.json")
    back = QNetwork.load(tmp_path / "q.json")
    assert np.max(np.abs(back.q_heads(states) - net.q_heads(states))) <= 1e-12
    with pytest.raises(ValueError):
        QNetwork.from_json('{"format": "other"}')


def test_load_params_shape_error(states):
    net = small_net(states)
    bad = {k: v for k, v in net.params().items()}
    bad["head.bo"] = np.zeros(3)
    with pytest.raises(ShapeError):
        net.load_params(bad)


def test_single_head_base_only_network(states):
    cfg = QNetConfig(n_heads=1, n_base=states[0].n_base, use_attention=False, use_graph=False,
                     use_latent=False, use_base=True, d_trunk=8, d_hidden=4, d_action=3)
    net = QNetwork(cfg)
    assert net.q_heads(states).shape == (len(states), 1, 24)
    # context-blind: changing the context block leaves Q unchanged
    s = states[0]
    other = s.replace_context(np.zeros_like(s.context))
    assert np.array_equal(q_total(s, net, [1.0]), q_total(other, net, [1.0]))
