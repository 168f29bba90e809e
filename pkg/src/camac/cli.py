"""Command line entry point: simulate, train, evaluate, compare, report.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.
"""

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import platform
import sys
from importlib import resources

import numpy as np

from . import __version__
from .environment.config import RewardParams, ScenarioConfig
from .errors import ConfigError

log = logging.getLogger("camac")

PROFILES = ("desk", "paper")
PAPER_TABLE = {
    # headline values quoted from the source publication; not reproduced here
    "note": "paper-reported, not reproduced",
    "cama": {"coordination_pct": 92, "energy_efficiency_pct": 15, "cost_reduction_pct": 10,
             "training_stability_pct": 88, "sample_efficiency_pct": 85, "convergence_episodes": 15},
    "placeholders": ["ddpg", "a3c", "ppo"],
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser():
    p = _Parser(prog="camac", description="Context-aware multi-agent EV charging coordination.")
    p.add_argument("--version", action="version", version=f"camac {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON config file (default: shipped profile)")
        sp.add_argument("--profile", choices=PROFILES, default="desk")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--episodes", type=int, help="override the episode count")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("simulate", help="roll a fixed policy through the simulator")
    common(sp)
    sp.add_argument("--policy", choices=("greedy", "random", "idle"), default="greedy")

    sp = sub.add_parser("train", help="train CAMA-DRL or a single-head baseline")
    common(sp)
    sp.add_argument("--algorithms", default="cama", choices=("cama", "dqn", "gnn-dqn"))
    sp.add_argument("--checkpoint-every", type=int, default=None,
                    help="also write a checkpoint every N episodes")

    sp = sub.add_parser("evaluate", help="run a trained checkpoint greedily")
    common(sp)
    sp.add_argument("--checkpoint", required=True)

    sp = sub.add_parser("compare", help="compare algorithms across seeds")
    common(sp)
    sp.add_argument("--algorithms", default="cama,dqn,ucb,greedy,random")
    sp.add_argument("--seeds", type=int, default=5, help="number of seeds, starting at --seed")
    sp.add_argument("--threads", type=int, default=None, help="worker threads (default CAMAC_THREADS or 1)")

    sp = sub.add_parser("report", help="summarise a compare output directory")
    sp.add_argument("--input", required=True, help="directory written by compare")
    sp.add_argument("--out", required=True)
    sp.add_argument("-v", "--verbose", action="store_true")
    return p


# ------------------------------------------------------------------ configs
def shipped_config_text(profile):
    return resources.files("camac").joinpath("configs", f"{profile}.json").read_text()


def _position(exc):
    return f"line {exc.lineno}, column {exc.colno}: {exc.msg}"


def parse_config_text(text, source="<config>"):
    """Parse config JSON into (scenario, trainer, reward params); raises ConfigError listing every issue."""
    from .training import TrainerConfig

    try:
        blob = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{source}: {_position(exc)}"]) from None
    if not isinstance(blob, dict):
        raise ConfigError([f"{source}: top level must be an object"])
    issues = []
    unknown = sorted(set(blob) - {"profile", "scenario", "trainer", "reward"})
    issues += [f"{k}: unknown top-level key" for k in unknown]
    profile = blob.get("profile", "desk")
    if profile not in PROFILES:
        issues.append(f"profile: must be one of {', '.join(PROFILES)}")
        profile = "desk"
    base = ScenarioConfig.paper() if profile == "paper" else ScenarioConfig.desk()
    scenario = trainer = reward = None
    try:
        scenario = ScenarioConfig.from_dict({**base.to_dict(), **blob.get("scenario", {})}, check=False)
        issues += scenario.validate()
    except (ConfigError, TypeError) as exc:
        issues += getattr(exc, "issues", [str(exc)])
    try:
        trainer = TrainerConfig.from_dict(blob.get("trainer", {}))
        issues += trainer.validate()
    except (ConfigError, TypeError) as exc:
        issues += getattr(exc, "issues", [str(exc)])
    try:
        r = blob.get("reward", {})
        fields = {f.name for f in dataclasses.fields(RewardParams)}
        bad = sorted(set(r) - fields)
        if bad:
            raise ConfigError([f"reward.{k}: unknown reward key" for k in bad])
        reward = RewardParams(**{k: tuple(v) if isinstance(v, list) else v for k, v in r.items()})
    except (ConfigError, TypeError) as exc:
        issues += getattr(exc, "issues", [str(exc)])
    if issues:
        raise ConfigError(issues)
    return scenario, trainer, reward


def validate_config(path):
    """Return ``(ScenarioConfig, TrainerConfig, RewardParams)`` or raise ConfigError with all issues."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"config: cannot read {path}: {exc.strerror or exc}"]) from None
    return parse_config_text(text, str(path))


def load_configs(args):
    if args.config:
        scenario, trainer, reward = validate_config(args.config)
    else:
        scenario, trainer, reward = parse_config_text(shipped_config_text(args.profile),
                                                      f"profile:{args.profile}")
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
        trainer = dataclasses.replace(trainer, seed=args.seed)
    if args.episodes is not None:
        trainer = dataclasses.replace(trainer, n_episodes=args.episodes)
    issues = scenario.validate() + trainer.validate()
    if issues:
        raise ConfigError(issues)
    return scenario, trainer, reward


def resolved_config(scenario, trainer, reward):
    r = {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(reward).items()}
    return {"scenario": scenario.to_dict(), "trainer": trainer.to_dict(), "reward": r}


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def write_manifest(out, argv, cfg, seed, outputs):
    manifest = {
        "tool": "camac",
        "version": __version__,
        "argv": list(argv),
        "config_sha256": config_hash(cfg) if cfg is not None else None,
        "seed": seed,
        "outputs": sorted(outputs),
        "versions": {"python": platform.python_version(), "numpy": np.__version__},
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if cfg is not None:
        with open(os.path.join(out, "config.json"), "w") as fh:
            json.dump(cfg, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _progress(rec):
    log.info("episode %d reward %.4f eps %.3f loss %.4f", rec.episode, rec.total_reward,
             rec.epsilon_mean, rec.loss_mean)


# ----------------------------------------------------------------- commands
def cmd_simulate(args, scenario, trainer, reward):
    from .baselines import NO_CHARGE_TEMPLATE, greedy_policy
    from .training import TemplateEnv, episode_seeds

    env = TemplateEnv(scenario, reward, record=True)
    rng = np.random.default_rng(np.random.SeedSequence([trainer.seed, 11]))
    seeds = episode_seeds(trainer.seed, trainer.n_episodes)
    path = os.path.join(args.out, "simulation.csv")
    header = ["episode", "t", "template", "r_ev", "r_grid", "r_station", "r_fleet", "r_env",
              "delivered_kwh", "allocated_kwh", "energy_cost", "total_load_kw", "renewable_kwh",
              "waiting_evs", "feasible"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for ep in range(trainer.n_episodes):
            state = env.reset(int(seeds[ep]))
            for t in range(trainer.t_max):
                if args.policy == "greedy":
                    a = greedy_policy(state)
                elif args.policy == "random":
                    a = int(rng.integers(env.n_templates))
                else:
                    a = NO_CHARGE_TEMPLATE
                state, r, done = env.step(a)
                s = env.trace[-1]
                w.writerow([ep, t, a] + [repr(float(x)) for x in r]
                           + [repr(s.delivered_kwh), repr(s.allocated_kwh), repr(s.energy_cost),
                              repr(s.total_load_kw), repr(s.renewable_kwh), s.waiting_evs,
                              int(s.feasible)])
                if done:
                    break
            log.info("episode %d simulated", ep)
    return ["simulation.csv"]


def cmd_train(args, scenario, trainer, reward):
    from .training import TemplateEnv, Trainer, write_trace

    cfg = dataclasses.replace(trainer, algorithm=args.algorithms)
    if args.checkpoint_every is not None:
        cfg = dataclasses.replace(cfg, checkpoint_every=args.checkpoint_every)
    cfg.check()
    t = Trainer(TemplateEnv(scenario, reward), cfg)
    net, records = t.run(checkpoint_dir=args.out, progress=_progress)
    write_trace(records, os.path.join(args.out, "trace.csv"))
    net.save(os.path.join(args.out, "checkpoint.json"))
    outputs = ["trace.csv", "checkpoint.json"]
    if cfg.checkpoint_every:
        outputs += sorted(f for f in os.listdir(args.out) if f.startswith("checkpoint_ep"))
    return outputs


def cmd_evaluate(args, scenario, trainer, reward):
    from .agent import QNetwork, greedy_index
    from .baselines import greedy_policy
    from .environment.config import PAPER_WEIGHTS
    from .metrics import build_report, emit_report
    from .training import TemplateEnv, consensus_action, episode_seeds

    net = QNetwork.load(args.checkpoint)
    env = TemplateEnv(scenario, reward, record=True)
    ref_env = TemplateEnv(scenario, reward, record=True)
    seeds = episode_seeds(trainer.seed, trainer.n_episodes)
    w = np.asarray(PAPER_WEIGHTS)
    scores, traces, ref_traces = [], [], []
    for ep in range(trainer.n_episodes):
        state = env.reset(int(seeds[ep]))
        ref_state = ref_env.reset(int(seeds[ep]))
        R = np.zeros(5)
        for t in range(trainer.t_max):
            if net.config.n_heads == 5:
                a = consensus_action(net, state, w)
            else:
                a = greedy_index(net.q_heads([state])[0, 0])
            state, r, done = env.step(a)
            ref_state, _, _ = ref_env.step(greedy_policy(ref_state))
            R += r
            if done:
                break
        scores.append(float(w @ R))
        traces.append(list(env.trace))
        ref_traces.append(list(ref_env.trace))
        log.info("episode %d reward %.4f", ep, scores[-1])
    report = build_report("checkpoint", trainer.seed, scores, traces, ref_traces,
                          tail=trainer.n_episodes)
    emit_report([report], os.path.join(args.out, "evaluation"))
    return ["evaluation.json", "evaluation.csv"]


def cmd_compare(args, scenario, trainer, reward):
    from .evaluation import compare
    from .metrics import emit_report

    algorithms = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    if args.seeds < 1:
        raise ConfigError(["seeds: must be >= 1"])
    seeds = [trainer.seed + k for k in range(args.seeds)]

    def progress(run):
        log.info("finished %s seed %d", run.algorithm, run.seed)

    result = compare(algorithms, seeds, scenario, trainer, reward, threads=args.threads,
                     progress=progress)
    emit_report(result.reports, os.path.join(args.out, "report"), paper_reference=PAPER_TABLE)
    return ["report.json", "report.csv"]


def summary_rows(reports):
    by_algo = {}
    for r in reports:
        by_algo.setdefault(r.algorithm, []).append(r)
    keys = ("final_reward", "coordination_success_rate", "energy_efficiency_gain", "cost_reduction",
            "training_stability", "sample_efficiency", "convergence_episode",
            "peak_demand_reduction", "renewable_utilization", "mean_wait_steps")
    rows = []
    for algo, rs in by_algo.items():
        row = {"algorithm": algo, "seeds": len(rs)}
        for k in keys:
            vals = np.array([getattr(r, k) for r in rs], dtype=np.float64)
            row[k] = float(np.nanmean(vals)) if np.any(np.isfinite(vals)) else float("nan")
        rows.append(row)
    return keys, rows


def cmd_report(args):
    from .metrics import load_report

    src = os.path.join(args.input, "report.json")
    if not os.path.exists(src):
        raise ConfigError([f"input: {src} not found"])
    reports = load_report(src)
    keys, rows = summary_rows(reports)
    with open(os.path.join(args.out, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("algorithm", "seeds") + keys)
        for row in rows:
            w.writerow([row["algorithm"], row["seeds"]] + [repr(row[k]) for k in keys])
        for name in PAPER_TABLE["placeholders"]:
            w.writerow([name, 0] + ["paper-reported, not reproduced"] + [""] * (len(keys) - 1))
    lines = ["| algorithm | seeds | " + " | ".join(keys) + " |",
             "|" + "---|" * (len(keys) + 2)]
    for row in rows:
        lines.append(f"| {row['algorithm']} | {row['seeds']} | "
                     + " | ".join(f"{row[k]:.4g}" for k in keys) + " |")
    for name in PAPER_TABLE["placeholders"]:
        lines.append(f"| {name} | 0 | paper-reported, not reproduced |" + " |" * (len(keys) - 1))
    with open(os.path.join(args.out, "summary.md"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return ["summary.csv", "summary.md"]


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "evaluate": cmd_evaluate,
            "compare": cmd_compare}


def run(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:           # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        if args.command == "report":
            if not os.path.isdir(args.input):
                raise ConfigError([f"input: {args.input} is not a directory"])
            cfg, seed = None, None
        else:
            scenario, trainer, reward = load_configs(args)
            if args.command == "evaluate" and not os.path.isfile(args.checkpoint):
                raise ConfigError([f"checkpoint: {args.checkpoint} not found"])
            cfg = resolved_config(scenario, trainer, reward)
            seed = trainer.seed
    except ConfigError as exc:
        print(f"camac: config error: {exc}", file=sys.stderr)
        return 1
    try:
        os.makedirs(args.out, exist_ok=True)
        if args.command == "report":
            outputs = cmd_report(args)
        else:
            outputs = COMMANDS[args.command](args, scenario, trainer, reward)
        write_manifest(args.out, argv, cfg, seed, outputs)
    except ConfigError as exc:
        print(f"camac: config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"camac: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
