import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from camac.environment import (PAPER_WEIGHTS, RewardParams, ScenarioConfig, StepOutcome,
                               check_weights, largest_remainder, stakeholder_reward, total_reward)
from camac.environment.rewards import base_reward, constraint_penalty, contextual_bonus
from camac.errors import ConfigError, InvariantError

unit = st.floats(0, 1)


@st.composite
def outcomes(draw):
    m = draw(st.integers(1, 4))
    k = draw(st.integers(1, 3))
    delivered = draw(st.floats(0, 200))
    return StepOutcome(
        t=draw(st.integers(0, 95)), dt_hours=0.25,
        energy_cost=draw(st.floats(0, 50)), commercial_energy_cost=draw(st.floats(0, 10)),
        waiting_evs=draw(st.integers(0, 10)), deadline_misses=draw(st.integers(0, 3)),
        queue_overflow=draw(st.integers(0, 3)), price_cap_violations=draw(st.integers(0, m)),
        loading=np.array(draw(st.lists(st.floats(0, 1.5), min_size=k, max_size=k))),
        voltage=np.array(draw(st.lists(st.floats(0.8, 1.1), min_size=k, max_size=k))),
        revenue=draw(st.floats(0, 50)), idle_ports=draw(st.integers(0, 8)),
        utilization=np.array(draw(st.lists(unit, min_size=m, max_size=m))),
        price_tier=np.array(draw(st.lists(st.integers(0, 2), min_size=m, max_size=m))),
        tasks_served=draw(st.integers(0, 2)), n_commercial=draw(st.integers(0, 2)),
        congestion=draw(unit), delivered_kwh=delivered, allocated_kwh=delivered,
        renewable_share=draw(unit), renewable_kw=draw(st.floats(0, 500)),
        background_kw=draw(st.floats(0, 500)), ev_load_kw=draw(st.floats(0, 500)),
        curtailed_fraction=draw(st.sampled_from([0.0, 0.2])), peak=draw(st.booleans()),
        low_soc_evs=draw(st.integers(0, 2)),
    )


@given(outcomes(), unit)
def test_bonus_and_penalty_signs(o, alpha):
    for i in range(5):
        assert contextual_bonus(i, o) >= 0
        assert constraint_penalty(i, o) <= 0
        r = stakeholder_reward(i, o, alpha)
        assert np.isfinite(r)


@given(outcomes())
def test_zero_scales_give_base_reward(o):
    p = RewardParams(beta=(0,) * 5, gamma=(0,) * 5)
    for i in range(5):
        assert stakeholder_reward(i, o, 0.7, p) == base_reward(i, o, p)


@given(outcomes(), unit)
def test_reward_decomposition(o, alpha):
    p = RewardParams()
    for i in range(5):
        expect = base_reward(i, o, p) + p.beta[i] * alpha * contextual_bonus(i, o) + p.gamma[i] * constraint_penalty(i, o)
        assert stakeholder_reward(i, o, alpha, p) == pytest.approx(expect, abs=1e-12)


def test_ev_user_base_zero_when_satisfied():
    o = StepOutcome(t=0, dt_hours=0.25)
    assert base_reward(0, o) == 0.0


def test_grid_overload_penalty():
    o = StepOutcome(t=0, dt_hours=0.25, loading=np.array([1.1]))
    assert constraint_penalty(1, o) < 0
    assert base_reward(1, o) < 0
    ok = StepOutcome(t=0, dt_hours=0.25, loading=np.array([0.5]))
    assert constraint_penalty(1, ok) == 0


def test_reward_argument_errors():
    o = StepOutcome(t=0, dt_hours=0.25)
    with pytest.raises(IndexError):
        stakeholder_reward(5, o)
    with pytest.raises(ValueError):
        stakeholder_reward(0, o, alpha_adapt=1.5)
    with pytest.raises(ConfigError):
        RewardParams(beta=(-1, 0, 0, 0, 0))


def test_total_reward_examples():
    assert total_reward(np.ones(5), PAPER_WEIGHTS) == pytest.approx(1.0, abs=1e-15)
    r = np.array([3.0, -1.0, 2.0, 0.5, 7.0])
    for k in range(5):
        assert total_reward(r, np.eye(5)[k]) == r[k]
    assert total_reward(np.zeros(5), PAPER_WEIGHTS) == 0.0


def test_total_reward_rejects_bad_weights():
    with pytest.raises(InvariantError):
        total_reward(np.ones(5), [0.5, 0.5, 0.5, 0, 0])
    with pytest.raises(InvariantError):
        check_weights([1.2, -0.2, 0, 0, 0])
    with pytest.raises(InvariantError):
        check_weights([0.5, 0.5])


simplex = arrays(np.float64, 5, elements=st.floats(0.01, 1)).map(lambda v: v / v.sum())


@given(arrays(np.float64, 5, elements=st.floats(-100, 100)), simplex, simplex, unit)
def test_total_reward_linear_in_weights(r, w1, w2, lam):
    mix = lam * w1 + (1 - lam) * w2
    mix = mix / mix.sum()
    lhs = total_reward(r, mix)
    rhs = lam * total_reward(r, w1) + (1 - lam) * total_reward(r, w2)
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_largest_remainder_examples():
    assert largest_remainder((0.3, 0.5, 0.2), 45) == [14, 22, 9]
    # remainders 0.9, 0.5, 0.6 -> the two spare units go to indices 0 and 2
    assert largest_remainder((0.3, 0.5, 0.2), 3) == [1, 1, 1]
    # 162.5, 62.5, 25: the tied half goes to the lower index
    assert largest_remainder((0.65, 0.25, 0.10), 250) == [163, 62, 25]
    assert sum(largest_remainder((1 / 3, 1 / 3, 1 / 3), 10)) == 10


def test_scenario_config_collects_every_issue():
    cfg = ScenarioConfig(tier_mix=(0.3, 0.5, 0.1), battery_range=(5.0, 300.0), n_evs=0)
    issues = cfg.validate()
    assert any(i.startswith("tier_mix") for i in issues)
    assert any(i.startswith("battery_range") for i in issues)
    assert any(i.startswith("n_evs") for i in issues)


def test_scenario_config_round_trip_and_unknown_keys():
    cfg = ScenarioConfig.paper()
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError, match="bogus"):
        ScenarioConfig.from_dict({**cfg.to_dict(), "bogus": 1})


def test_profiles():
    d = ScenarioConfig.desk()
    assert (d.n_evs, d.n_stations, d.n_transformers) == (10, 3, 1)
    p = ScenarioConfig.paper()
    assert (p.n_evs, p.n_stations, p.n_transformers) == (250, 45, 12)
