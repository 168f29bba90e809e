import json

import numpy as np
import pytest

from camac.environment import PAPER_WEIGHTS, ScenarioConfig
from camac.evaluation import (AlgorithmRun, compare, run_algorithm, score_episodes,
                              scoring_weights, thread_count)
from camac.training import TrainerConfig

SMALL = TrainerConfig(n_episodes=3, t_max=16, b_min=16, batch_size=8, target_sync=10)


def test_score_episodes_fixed_and_trajectory():
    run = AlgorithmRun("x", 0, np.array([[1.0, 0, 0, 0, 0], [0, 2.0, 0, 0, 0]]), None)
    assert np.allclose(score_episodes(run, PAPER_WEIGHTS), [0.25, 0.4])
    traj = np.array([np.eye(5)[0], np.eye(5)[1]])
    assert np.array_equal(score_episodes(run, traj), [1.0, 2.0])


def test_scoring_weights_prefers_cama_trajectory():
    traj = np.tile(np.eye(5)[2], (2, 1))
    runs = [AlgorithmRun("greedy", 0, np.zeros((2, 5)), np.tile(PAPER_WEIGHTS, (2, 1))),
            AlgorithmRun("cama", 0, np.zeros((2, 5)), traj)]
    assert np.array_equal(scoring_weights(runs, 2), traj)
    assert np.allclose(scoring_weights(runs[:1], 2), np.tile(PAPER_WEIGHTS, (2, 1)))


def test_thread_count_env(monkeypatch):
    monkeypatch.setenv("CAMAC_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.setenv("CAMAC_THREADS", "x")
    assert thread_count(2) == 2


def test_same_seed_same_worlds():
    a = run_algorithm("greedy", ScenarioConfig.desk(), SMALL, 4)
    b = run_algorithm("greedy", ScenarioConfig.desk(), SMALL, 4)
    assert np.array_equal(a.stakeholder_totals, b.stakeholder_totals)
    with pytest.raises(ValueError):
        run_algorithm("sarsa", ScenarioConfig.desk(), SMALL, 0)


def test_compare_independent_of_thread_count():
    algos = ("cama", "dqn", "random")
    one = compare(algos, (0, 1), ScenarioConfig.desk(), SMALL, threads=1)
    three = compare(algos, (0, 1), ScenarioConfig.desk(), SMALL, threads=3)
    assert one.scores.keys() == three.scores.keys()
    for k in one.scores:
        assert np.array_equal(one.scores[k], three.scores[k])
    # reports hold NaN, which json renders comparably
    assert json.dumps([r.to_dict() for r in one.reports]) == json.dumps([r.to_dict() for r in three.reports])
    assert len(one.reports) == 6
