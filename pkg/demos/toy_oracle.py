"""Train the agent on a two-state MDP and compare its Q-values with value iteration.

Action 0 stays, action 1 switches, and only "stay in state 1" pays 1. With
gamma 0.5 the exact values are Q* = [[0.5, 1], [2, 0.5]]; the learned values
should land within a few hundredths after a few hundred short episodes.

    python3 demos/toy_oracle.py [seed]
"""

import sys

import numpy as np

from camac.environment import PAPER_WEIGHTS
from camac.training import ToyMDP, Trainer, TrainerConfig

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
env = ToyMDP(horizon=10)
cfg = TrainerConfig(n_episodes=300, t_max=10, b_min=32, batch_size=32, u_freq=1, target_sync=20,
                    lr=3e-3, gamma=0.5, eps_base=1.0, eps_min=1.0, decay_time=0.0,
                    gamma_coord=1.0, eta=0.0, encoder_lr=0.0, capacity=2000, seed=seed)
# a plain trunk over the two-feature state; no context pathway is needed here
net, records = Trainer(env, cfg, net_overrides=dict(
    d_trunk=16, d_hidden=16, use_attention=False, use_graph=False, use_latent=False, use_base=True)).run()

states = []
for s in (0, 1):
    env.s, env.t = s, 0
    states.append(env._state())
learned = np.tensordot(PAPER_WEIGHTS, net.q_heads(states), axes=([0], [1]))
exact = env.q_star(cfg.gamma)
np.set_printoptions(precision=4, suppress=True)
print("value iteration Q*:\n", exact)
print("learned Q_tot:\n", learned)
print(f"max abs error {np.max(np.abs(learned - exact)):.2e} after {len(records)} episodes")
