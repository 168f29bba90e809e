"""Evaluation metrics computed from simulation traces, and report emission.

A trace is a list of per-step records (:class:`StepRecord`) for one or more
episodes. None of these metrics has a published formula; the definitions
below are the implementation's own and are documented in the README.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

REPORT_CSV_HEADER = ("algorithm", "episode", "performance_pct", "reward", "coordination_rate")


@dataclass(frozen=True)
class StepRecord:
    feasible: bool
    delivered_kwh: float
    allocated_kwh: float
    energy_cost: float
    total_load_kw: float
    ev_load_kw: float
    renewable_kwh: float
    waiting_evs: int
    peak: bool

    @classmethod
    def from_outcome(cls, o):
        return cls(
            feasible=bool(o.feasible()), delivered_kwh=float(o.delivered_kwh),
            allocated_kwh=float(o.allocated_kwh), energy_cost=float(o.energy_cost),
            total_load_kw=float(o.background_kw + o.ev_load_kw), ev_load_kw=float(o.ev_load_kw),
            renewable_kwh=float(o.renewable_kwh), waiting_evs=int(o.waiting_evs),
            peak=bool(o.peak))


def _nonempty(trace):
    if len(trace) == 0:
        raise ValueError("trace is empty")


def coordination_success_rate(trace):
    """Fraction of steps whose executed joint action broke no hard constraint."""
    _nonempty(trace)
    return sum(1 for s in trace if s.feasible) / len(trace)


def _useful_fraction(trace):
    allocated = sum(s.allocated_kwh for s in trace)
    if allocated <= 0:
        return 1.0
    return min(1.0, sum(s.delivered_kwh for s in trace) / allocated)


def _check_pair(trace, reference):
    _nonempty(trace)
    if len(trace) != len(reference):
        raise ValueError(f"horizon mismatch: {len(trace)} vs {len(reference)} steps")


def energy_efficiency_gain(trace, reference):
    """Useful-energy fraction of ``trace`` minus that of ``reference``.

    Useful energy is what reached batteries; the total is what the joint
    action allocated, including energy lost to queueing and cap curtailment.
    """
    _check_pair(trace, reference)
    return _useful_fraction(trace) - _useful_fraction(reference)


def _cost_per_kwh(trace):
    kwh = sum(s.delivered_kwh for s in trace)
    return sum(s.energy_cost for s in trace) / kwh if kwh > 0 else 0.0


def cost_reduction(trace, reference):
    """``1 - (cost per kWh) / (reference cost per kWh)``, clipped to [-1, 1]."""
    _check_pair(trace, reference)
    ref = _cost_per_kwh(reference)
    if ref <= 0:
        return 0.0
    return float(np.clip(1.0 - _cost_per_kwh(trace) / ref, -1.0, 1.0))


def peak_demand_reduction(trace, reference):
    """``1 - peak total load / reference peak total load``, clipped to [-1, 1]."""
    _check_pair(trace, reference)
    ref = max(s.total_load_kw for s in reference)
    if ref <= 0:
        return 0.0
    return float(np.clip(1.0 - max(s.total_load_kw for s in trace) / ref, -1.0, 1.0))


def renewable_utilization(trace):
    _nonempty(trace)
    kwh = sum(s.delivered_kwh for s in trace)
    return min(1.0, sum(s.renewable_kwh for s in trace) / kwh) if kwh > 0 else 0.0


def mean_wait_steps(trace):
    """Mean number of queued EVs per step, i.e. EV-steps spent waiting per step."""
    _nonempty(trace)
    return sum(s.waiting_evs for s in trace) / len(trace)


def training_stability(rewards, tol=0.2, window=10):
    """Fraction of consecutive-episode changes within ``tol`` of the trailing mean |reward|."""
    r = np.asarray(rewards, dtype=np.float64)
    if len(r) < window:
        raise ValueError(f"need at least {window} episodes, got {len(r)}")
    ok = 0
    for k in range(1, len(r)):
        scale = np.mean(np.abs(r[max(0, k - window):k]))
        delta = abs(r[k] - r[k - 1])
        ok += delta <= tol * scale if scale > 0 else delta == 0
    return ok / (len(r) - 1)


def convergence_episode(rewards, window=5, tail=20, reach=0.95, hold=0.9):
    """First episode whose trailing moving average reaches ``reach`` of the final level and holds.

    Episodes are counted from 1, so a flat series converges at ``window``.
    "Reaching a fraction of the level" is measured on the distance from the
    series minimum so that negative rewards are handled, i.e. the moving
    average must close ``reach`` of the gap between the minimum and the final
    mean. Returns the number of episodes if it never converges.
    """
    r = np.asarray(rewards, dtype=np.float64)
    n = len(r)
    if n < tail:
        raise ValueError(f"need at least {tail} episodes, got {n}")
    ma = np.convolve(r, np.ones(window) / window, mode="valid")       # ma[k] ends at episode k+window
    final = r[-tail:].mean()
    lo = min(r.min(), final)
    span = final - lo
    if span <= 0:
        return window
    level = (ma - lo) / span
    for k in range(len(ma)):
        if level[k] >= reach and np.all(level[k:] >= hold):
            return k + window
    return n


def performance_curve(rewards, tail=20):
    """Episode rewards min-max normalised to [0, 100] against (minimum, final plateau)."""
    r = np.asarray(rewards, dtype=np.float64)
    if len(r) == 0:
        return r
    final = r[-min(tail, len(r)):].mean()
    lo = r.min()
    if final - lo <= 0:
        return np.full(len(r), 100.0)
    return np.clip(100.0 * (r - lo) / (final - lo), 0.0, 100.0)


def sample_efficiency(rewards, tail=20):
    """Area under the normalised learning curve, in [0, 1]."""
    curve = performance_curve(rewards, tail)
    return float(np.mean(curve) / 100.0) if len(curve) else 0.0


@dataclass
class RunReport:
    algorithm: str
    seed: int
    coordination_success_rate: float
    energy_efficiency_gain: float
    cost_reduction: float
    training_stability: float
    sample_efficiency: float
    convergence_episode: int
    peak_demand_reduction: float
    renewable_utilization: float
    mean_wait_steps: float
    final_reward: float = 0.0
    episode_rewards: tuple = ()
    episode_coordination: tuple = ()

    def validate(self):
        issues = []
        for name in ("coordination_success_rate", "training_stability", "sample_efficiency",
                     "renewable_utilization"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                issues.append(f"{name}={v} outside [0, 1]")
        for name in ("energy_efficiency_gain", "cost_reduction", "peak_demand_reduction"):
            v = getattr(self, name)
            if not -1.0 <= v <= 1.0:
                issues.append(f"{name}={v} outside [-1, 1]")
        if self.episode_rewards and self.convergence_episode > len(self.episode_rewards):
            issues.append("convergence_episode exceeds episode count")
        return issues

    def to_dict(self):
        d = asdict(self)
        d["episode_rewards"] = list(self.episode_rewards)
        d["episode_coordination"] = list(self.episode_coordination)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["episode_rewards"] = tuple(d.get("episode_rewards", ()))
        d["episode_coordination"] = tuple(d.get("episode_coordination", ()))
        return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})


def build_report(algorithm, seed, episode_rewards, episode_traces, reference_traces, tail=20):
    """Assemble a :class:`RunReport`.

    ``episode_traces`` holds one step trace per episode; the last ``tail``
    episodes form the evaluation trace compared against the same episodes of
    ``reference_traces``.
    """
    rewards = np.asarray(episode_rewards, dtype=np.float64)
    k = min(tail, len(episode_traces))
    trace = [s for ep in episode_traces[-k:] for s in ep]
    ref = [s for ep in reference_traces[-k:] for s in ep]
    n = len(rewards)
    return RunReport(
        algorithm=algorithm, seed=int(seed),
        coordination_success_rate=coordination_success_rate(trace),
        energy_efficiency_gain=energy_efficiency_gain(trace, ref),
        cost_reduction=cost_reduction(trace, ref),
        training_stability=training_stability(rewards) if n >= 10 else float("nan"),
        sample_efficiency=sample_efficiency(rewards),
        convergence_episode=convergence_episode(rewards) if n >= 20 else n,
        peak_demand_reduction=peak_demand_reduction(trace, ref),
        renewable_utilization=renewable_utilization(trace),
        mean_wait_steps=mean_wait_steps(trace),
        final_reward=float(rewards[-k:].mean()) if n else float("nan"),
        episode_rewards=tuple(float(x) for x in rewards),
        episode_coordination=tuple(coordination_success_rate(ep) for ep in episode_traces),
    )


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    return x


def emit_report(reports, path, paper_reference=None):
    """Write ``<path>.json`` and ``<path>.csv``; returns both paths.

    The CSV has one row per (report, episode). Each report's curve is the
    performance percentage of its episode rewards.
    """
    base = str(path)
    for ext in (".json", ".csv"):
        if base.endswith(ext):
            base = base[: -len(ext)]
    json_path, csv_path = base + ".json", base + ".csv"
    blob = {"schema": "camac-report/1", "reports": [_json_safe(r.to_dict()) for r in reports]}
    if paper_reference is not None:
        blob["paper_reported_not_reproduced"] = paper_reference
    with open(json_path, "w") as fh:
        json.dump(blob, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_CSV_HEADER)
        for r in reports:
            curve = performance_curve(r.episode_rewards)
            coord = list(r.episode_coordination) + [float("nan")] * (len(curve) - len(r.episode_coordination))
            for ep, (pct, rew, cr) in enumerate(zip(curve, r.episode_rewards, coord)):
                w.writerow([r.algorithm, ep, repr(float(pct)), repr(float(rew)), repr(float(cr))])
    return json_path, csv_path


def load_report(path):
    with open(path) as fh:
        blob = json.load(fh)
    return [RunReport.from_dict({k: (float("nan") if v is None else v) for k, v in d.items()})
            for d in blob["reports"]]
