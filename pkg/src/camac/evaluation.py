"""Run algorithms on a scenario and compare them seed by seed.

Every algorithm with the same seed sees the same sequence of episode worlds.
Episode scores are coordinated rewards recomputed from per-stakeholder totals
under a common weight trajectory (see :func:`score_episodes`), so algorithms
are ranked on one objective.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import GreedyAgent, RandomAgent, UCBAgent
from .context import AdaptationParams, adaptation_factor
from .environment.config import PAPER_WEIGHTS, total_reward
from .metrics import build_report
from .training import LEARNERS, TemplateEnv, Trainer, TrainerConfig, episode_seeds

ALGORITHMS = ("cama", "dqn", "gnn-dqn", "ucb", "greedy", "random")
REFERENCE = "greedy"


@dataclass
class AlgorithmRun:
    algorithm: str
    seed: int
    stakeholder_totals: np.ndarray          # (episodes, 5)
    weights_used: np.ndarray                # (episodes, 5) weights active during each episode
    traces: list = field(repr=False, default_factory=list)
    network: object = field(repr=False, default=None)
    records: list = field(repr=False, default_factory=list)


def _policy_run(agent, scenario, trainer_config, seed, reward_params=None):
    """Roll a non-learning (or online bandit) agent over the run's episode worlds."""
    env = TemplateEnv(scenario, reward_params, record=True)
    seeds = episode_seeds(seed, trainer_config.n_episodes)
    w = np.asarray(trainer_config.initial_weights, dtype=np.float64)
    totals, traces = [], []
    adaptation = None
    for ep in range(trainer_config.n_episodes):
        state = env.reset(int(seeds[ep]))
        if adaptation is None:
            adaptation = AdaptationParams.zeros(state.n_ctx)
        R = np.zeros(5)
        for t in range(trainer_config.t_max):
            a = agent.act(state, ep)
            alpha = adaptation_factor(state, t, adaptation)
            nxt, rewards, done = env.step(a, alpha_adapt=alpha)
            agent.observe(state, a, total_reward(rewards, w))
            R += rewards
            state = nxt
            if done:
                break
        totals.append(R)
        traces.append(list(env.trace))
    n = trainer_config.n_episodes
    return AlgorithmRun(agent.name, seed, np.array(totals).reshape(n, 5), np.tile(w, (n, 1)), traces)


def _trained_run(algorithm, scenario, trainer_config, seed, reward_params=None):
    cfg = TrainerConfig.from_dict({**trainer_config.to_dict(), "seed": seed, "algorithm": algorithm})
    env = TemplateEnv(scenario, reward_params, record=True)
    trainer = Trainer(env, cfg)
    net, records = trainer.run()
    n = len(records)
    return AlgorithmRun(
        algorithm, seed,
        np.array([r.stakeholder_totals for r in records]).reshape(n, 5),
        np.array([r.info["weights_used"] for r in records]).reshape(n, 5),
        [r.info["trace"] for r in records], net, records)


def run_algorithm(algorithm, scenario, trainer_config, seed, reward_params=None, ucb_c=1.0):
    if algorithm in LEARNERS:
        return _trained_run(algorithm, scenario, trainer_config, seed, reward_params)
    if algorithm == "ucb":
        agent = UCBAgent(c=ucb_c)
    elif algorithm == "greedy":
        agent = GreedyAgent()
    elif algorithm == "random":
        agent = RandomAgent(np.random.default_rng(np.random.SeedSequence([seed, 7])))
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {', '.join(ALGORITHMS)}")
    return _policy_run(agent, scenario, trainer_config, seed, reward_params)


def score_episodes(run, weights):
    """Coordinated reward per episode, ``sum_i w_i R_i``, under ``weights`` of shape (episodes, 5) or (5,)."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 1:
        return run.stakeholder_totals @ w
    return np.einsum("ei,ei->e", run.stakeholder_totals, w)


def scoring_weights(runs, n_episodes):
    """CAMA-DRL's weight trajectory when it is among ``runs``, else the fixed initial weights."""
    for r in runs:
        if r.algorithm == "cama":
            return r.weights_used
    return np.tile(np.asarray(PAPER_WEIGHTS), (n_episodes, 1))


def thread_count(default=1):
    raw = os.environ.get("CAMAC_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        return default


@dataclass
class Comparison:
    algorithms: tuple
    seeds: tuple
    runs: dict                      # (algorithm, seed) -> AlgorithmRun
    scores: dict                    # (algorithm, seed) -> per-episode scores
    reports: list

    def final_mean(self, algorithm, seed, tail=20):
        s = self.scores[(algorithm, seed)]
        return float(np.mean(s[-min(tail, len(s)):]))


def compare(algorithms, seeds, scenario, trainer_config, reward_params=None, threads=None,
            tail=20, progress=None):
    """Run every (algorithm, seed) pair and build one report per pair.

    Work fans out over ``threads`` workers (default: ``CAMAC_THREADS`` or 1);
    each job owns a private world and results are merged in seed order, so the
    output does not depend on the worker count.
    """
    algorithms = tuple(algorithms)
    unknown = [a for a in algorithms if a not in ALGORITHMS]
    if unknown:
        raise ValueError(f"unknown algorithms {unknown}; choose from {', '.join(ALGORITHMS)}")
    seeds = tuple(int(s) for s in seeds)
    needed = list(algorithms) + ([REFERENCE] if REFERENCE not in algorithms else [])
    jobs = [(a, s) for s in seeds for a in needed]
    threads = thread_count() if threads is None else max(1, int(threads))

    def work(job):
        run = run_algorithm(job[0], scenario, trainer_config, job[1], reward_params)
        if progress is not None:
            progress(run)
        return run

    if threads == 1:
        results = [work(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, jobs))
    runs = dict(zip(jobs, results))
    scores, reports = {}, []
    for s in seeds:
        per_seed = [runs[(a, s)] for a in needed]
        w = scoring_weights(per_seed, trainer_config.n_episodes)
        ref = runs[(REFERENCE, s)]
        for a in algorithms:
            run = runs[(a, s)]
            scores[(a, s)] = score_episodes(run, w)
            reports.append(build_report(a, s, scores[(a, s)], run.traces, ref.traces, tail))
    return Comparison(algorithms, seeds, runs, scores, reports)
