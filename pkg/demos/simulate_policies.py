"""Roll the greedy, random and uncoordinated policies through one desk-profile day.

Prints per-policy totals so the simulator's trade-offs are visible before any
learning: energy delivered, cost, queueing and how often a hard constraint broke.

    python3 demos/simulate_policies.py [seed]
"""

import sys

import numpy as np

from camac.baselines import greedy_policy, random_policy
from camac.environment import PAPER_WEIGHTS, ScenarioConfig
from camac.templates import find_template
from camac.training import TemplateEnv

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
cfg = ScenarioConfig.desk()
rng = np.random.default_rng(seed)
uncoordinated = find_template("needed", 1.0, "nearest", 0)
policies = {
    "greedy": greedy_policy,
    "random": lambda s: random_policy(rng),
    "uncoordinated": lambda s: uncoordinated,
}

print(f"desk profile, seed {seed}: {cfg.n_evs} EVs, {cfg.n_stations} stations, {cfg.horizon} steps")
print(f"{'policy':<14}{'reward':>9}{'kWh':>9}{'cost $':>9}{'queued':>9}{'feasible':>10}")
for name, policy in policies.items():
    env = TemplateEnv(cfg, record=True)
    state = env.reset(seed)
    R = np.zeros(5)
    done = False
    while not done:
        state, r, done = env.step(policy(state))
        R += r
    tr = env.trace
    print(f"{name:<14}{PAPER_WEIGHTS @ R:9.2f}{sum(s.delivered_kwh for s in tr):9.1f}"
          f"{sum(s.energy_cost for s in tr):9.2f}{np.mean([s.waiting_evs for s in tr]):9.2f}"
          f"{np.mean([s.feasible for s in tr]):10.2f}")
