"""Per-stakeholder rewards: base term + scaled contextual bonus + scaled penalty.

Stakeholder order: EV users, grid, station operator, fleet operator,
environment. Rewards are computed from a :class:`StepOutcome`, the record of
what one simulator step did.
"""

from dataclasses import dataclass, field

import numpy as np

from .config import RewardParams


@dataclass
class StepOutcome:
    t: int
    dt_hours: float
    energy_cost: float = 0.0            # $ paid by all EVs
    commercial_energy_cost: float = 0.0
    waiting_evs: int = 0
    deadline_misses: int = 0
    queue_overflow: int = 0
    price_cap_violations: int = 0
    loading: np.ndarray = field(default_factory=lambda: np.zeros(1))
    voltage: np.ndarray = field(default_factory=lambda: np.ones(1))
    overload_threshold: float = 0.9
    revenue: float = 0.0
    idle_ports: int = 0
    utilization: np.ndarray = field(default_factory=lambda: np.zeros(0))
    price_tier: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    tasks_served: int = 0
    n_commercial: int = 0
    congestion: float = 0.0
    delivered_kwh: float = 0.0          # grid-side metered energy to EVs
    allocated_kwh: float = 0.0          # energy the joint action tried to deliver
    renewable_share: float = 0.0
    renewable_kw: float = 0.0
    background_kw: float = 0.0
    ev_load_kw: float = 0.0
    curtailed_fraction: float = 0.0
    peak: bool = False
    low_soc_evs: int = 0
    ev_metered_kwh: np.ndarray = None
    ev_drain_kwh: np.ndarray = None
    station_metered_kwh: np.ndarray = None

    @property
    def renewable_kwh(self):
        return self.renewable_share * self.delivered_kwh

    @property
    def overloaded(self):
        return np.asarray(self.loading) > self.overload_threshold + 1e-12

    @property
    def peak_fossil_fraction(self):
        if not self.peak or self.delivered_kwh <= 0:
            return 0.0
        return 1.0 - self.renewable_share

    def feasible(self):
        """No queue overflow, no stressed transformer, no EV below 5% SOC, no missed deadline."""
        return (self.queue_overflow == 0 and not np.any(self.overloaded)
                and self.low_soc_evs == 0 and self.deadline_misses == 0)


def _overload_ratio(o):
    thr = o.overload_threshold
    return np.maximum(0.0, np.asarray(o.loading) - thr) / thr


def base_reward(i, o, p=None):
    p = p or RewardParams()
    if i == 0:
        return -p.cost_scale * o.energy_cost - p.wait_coef * o.waiting_evs - p.miss_coef * o.deadline_misses
    if i == 1:
        return -float(np.sum(_overload_ratio(o) ** 2)) - p.voltage_coef * float(np.sum(np.abs(np.asarray(o.voltage) - 1.0)))
    if i == 2:
        return p.cost_scale * o.revenue - p.idle_coef * o.idle_ports
    if i == 3:
        return p.task_reward * o.tasks_served - p.cost_scale * o.commercial_energy_cost
    if i == 4:
        share = o.renewable_share if o.delivered_kwh > 0 else 0.0
        return share - p.fossil_coef * o.peak_fossil_fraction
    raise IndexError(f"stakeholder index {i} out of range")


def contextual_bonus(i, o):
    """Non-negative context bonus in [0, 1]."""
    charged = o.delivered_kwh > 0
    if i == 0:
        # charging while renewables cover the load
        return o.renewable_share if charged else 0.0
    if i == 1:
        # off-peak charging
        return 1.0 if (charged and not o.peak) else 0.0
    if i == 2:
        u = np.asarray(o.utilization, dtype=np.float64)
        if u.size == 0:
            return 0.0
        tier = np.asarray(o.price_tier)
        want = np.where(u >= 0.75, 2, np.where(u <= 0.25, 0, 1))
        return float(np.mean(want == tier))
    if i == 3:
        if o.n_commercial == 0:
            return 0.0
        return (1.0 - o.congestion) * o.tasks_served / o.n_commercial
    if i == 4:
        surplus = o.renewable_kw - o.background_kw
        if surplus <= 0 or not charged:
            return 0.0
        return float(min(o.ev_load_kw, surplus) / surplus)
    raise IndexError(f"stakeholder index {i} out of range")


def constraint_penalty(i, o):
    """Non-positive penalty for constraint violations."""
    if i == 0:
        return -float(o.deadline_misses)
    if i == 1:
        return -float(np.sum(o.overloaded))
    if i == 2:
        return -float(o.queue_overflow + o.price_cap_violations)
    if i == 3:
        return -float(o.low_soc_evs)
    if i == 4:
        return -float(o.curtailed_fraction)
    raise IndexError(f"stakeholder index {i} out of range")


def stakeholder_reward(i, outcome, alpha_adapt=1.0, params=None):
    """``base + beta_i * alpha * bonus + gamma_i * penalty`` for stakeholder ``i`` (0-based)."""
    if not 0 <= i < 5:
        raise IndexError(f"stakeholder index {i} out of range")
    if not 0.0 <= alpha_adapt <= 1.0:
        raise ValueError(f"alpha_adapt must be in [0, 1], got {alpha_adapt}")
    p = params or RewardParams()
    r = base_reward(i, outcome, p)
    if p.beta[i]:
        r += p.beta[i] * alpha_adapt * contextual_bonus(i, outcome)
    if p.gamma[i]:
        r += p.gamma[i] * constraint_penalty(i, outcome)
    return float(r)


def stakeholder_rewards(outcome, alpha_adapt=1.0, params=None):
    return np.array([stakeholder_reward(i, outcome, alpha_adapt, params) for i in range(5)])
