"""Short desk-profile comparison of every algorithm on two seeds.

Scores each run under CAMA's adapted weight trajectory and prints the
final-episode means. Use ``--episodes 150`` for the full-length study; the
default of 30 finishes in a few minutes on one core.

    python3 demos/desk_compare.py [--episodes N]
"""

import argparse
import time

from camac.environment import ScenarioConfig
from camac.evaluation import ALGORITHMS, compare
from camac.training import TrainerConfig

ap = argparse.ArgumentParser()
ap.add_argument("--episodes", type=int, default=30)
ap.add_argument("--seeds", type=int, default=2)
args = ap.parse_args()

start = time.perf_counter()
seeds = tuple(range(args.seeds))
result = compare(ALGORITHMS, seeds, ScenarioConfig.desk(),
                 TrainerConfig(n_episodes=args.episodes, batch_size=128))
tail = min(20, args.episodes)
print(f"final-{tail} mean coordinated reward, {args.episodes} episodes")
print(f"{'algorithm':<10}" + "".join(f"{'seed ' + str(s):>10}" for s in seeds))
for a in ALGORITHMS:
    print(f"{a:<10}" + "".join(f"{result.final_mean(a, s, tail):10.2f}" for s in seeds))
print(f"took {time.perf_counter() - start:.0f}s")
