"""Scenario configuration, reward scales and stakeholder weights."""

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, InvariantError

STAKEHOLDERS = ("ev_users", "grid", "station", "fleet", "environment")
PAPER_WEIGHTS = (0.25, 0.20, 0.20, 0.20, 0.15)
TIERS = ("level2", "dc_fast", "high_power")
VEHICLE_CLASSES = ("passenger", "suv", "commercial")

# rated power bounds per charger tier, kW
TIER_POWER = {"level2": (7.0, 11.0), "dc_fast": (50.0, 150.0), "high_power": (150.0, 350.0)}


def largest_remainder(fractions, total):
    """Integer counts summing to ``total`` closest to ``fractions * total``.

    Ties on the remainder go to the lower index.
    """
    fractions = np.asarray(fractions, dtype=np.float64)
    raw = fractions * total
    counts = np.floor(raw + 1e-9).astype(int)
    rem = np.round(raw - counts, 9)
    short = int(total - counts.sum())
    order = sorted(range(len(fractions)), key=lambda i: (-rem[i], i))
    for i in order[:max(short, 0)]:
        counts[i] += 1
    return [int(c) for c in counts]


@dataclass
class ScenarioConfig:
    n_evs: int = 10
    n_stations: int = 3
    n_transformers: int = 1
    n_operators: int = 1
    horizon: int = 96
    step_minutes: float = 15.0
    tier_mix: tuple = (0.30, 0.50, 0.20)
    fleet_mix: tuple = (0.65, 0.25, 0.10)
    battery_range: tuple = (40.0, 100.0)
    temperature_range: tuple = (-10.0, 40.0)
    ports_per_station: int = 2
    queue_limit: int = 2
    area_km: float = 8.0
    near_radius_km: float = 3.0
    transformer_capacity_kw: float = 400.0
    background_load: tuple = (0.20, 0.50)
    overload_threshold: float = 0.9
    solar_capacity_kw: float = 150.0
    wind_capacity_kw: float = 60.0
    tariff_offpeak: float = 0.12
    tariff_mid: float = 0.20
    tariff_peak: float = 0.35
    tariff_volatility: float = 0.02
    price_cap: float = 0.60
    weather_volatility: float = 1.0
    traffic_volatility: float = 0.05
    task_probability: float = 0.3
    task_kwh: float = 4.0
    eta_chg: float = 0.95
    start_hour: float = 17.0
    start_weekday: int = -1
    complexity_max_std: tuple = (3.0, 0.2, 0.2, 0.1)
    seed: int = 0

    @property
    def dt_hours(self):
        return self.step_minutes / 60.0

    def validate(self):
        """Return the list of every violated constraint (empty when valid)."""
        issues = []
        for name in ("n_evs", "n_stations", "n_transformers", "n_operators", "horizon",
                     "ports_per_station"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                issues.append(f"{name}: must be an integer >= 1, got {v!r}")
        if not isinstance(self.queue_limit, (int, np.integer)) or self.queue_limit < 0:
            issues.append(f"queue_limit: must be an integer >= 0, got {self.queue_limit!r}")
        for name, n in (("tier_mix", 3), ("fleet_mix", 3)):
            mix = getattr(self, name)
            if len(mix) != n or any((not np.isfinite(x)) or x < 0 for x in mix):
                issues.append(f"{name}: must be {n} non-negative fractions")
            elif abs(sum(mix) - 1.0) > 1e-9:
                issues.append(f"{name}: fractions sum to {sum(mix):.6g}, expected 1")
        lo, hi = (tuple(self.battery_range) + (None, None))[:2]
        if lo is None or hi is None or not (10.0 <= lo <= hi <= 200.0):
            issues.append(f"battery_range: must satisfy 10 <= lo <= hi <= 200 kWh, got {self.battery_range}")
        tlo, thi = (tuple(self.temperature_range) + (None, None))[:2]
        if tlo is None or thi is None or not tlo < thi:
            issues.append(f"temperature_range: need lo < hi, got {self.temperature_range}")
        blo, bhi = (tuple(self.background_load) + (None, None))[:2]
        if blo is None or bhi is None or not (0.0 <= blo <= bhi <= 0.55):
            issues.append("background_load: need 0 <= lo <= hi <= 0.55 of transformer capacity")
        for name in ("step_minutes", "area_km", "transformer_capacity_kw", "task_kwh",
                     "tariff_offpeak", "tariff_mid", "tariff_peak", "price_cap"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                issues.append(f"{name}: must be > 0, got {v!r}")
        for name in ("near_radius_km", "solar_capacity_kw", "wind_capacity_kw",
                     "tariff_volatility", "weather_volatility", "traffic_volatility"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                issues.append(f"{name}: must be >= 0, got {v!r}")
        if not 0.0 < self.eta_chg <= 1.0:
            issues.append(f"eta_chg: must be in (0, 1], got {self.eta_chg!r}")
        if not 0.0 <= self.task_probability <= 1.0:
            issues.append(f"task_probability: must be in [0, 1], got {self.task_probability!r}")
        if not 0.0 < self.overload_threshold <= 1.0:
            issues.append(f"overload_threshold: must be in (0, 1], got {self.overload_threshold!r}")
        if len(self.complexity_max_std) != 4 or any(s <= 0 for s in self.complexity_max_std):
            issues.append("complexity_max_std: need four positive std-dev scales")
        if not (-1 <= self.start_weekday <= 6):
            issues.append("start_weekday: must be -1 (random) or 0..6")
        return issues

    def check(self):
        issues = self.validate()
        if issues:
            raise ConfigError(issues)
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, data, check=True):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([f"{k}: unknown scenario key" for k in unknown])
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        cfg = cls(**kwargs)
        return cfg.check() if check else cfg

    @classmethod
    def paper(cls, **overrides):
        """The 250-EV / 45-station / 12-transformer scenario."""
        base = dict(n_evs=250, n_stations=45, n_transformers=12, n_operators=4,
                    ports_per_station=4, queue_limit=4, area_km=25.0,
                    transformer_capacity_kw=1200.0, solar_capacity_kw=3000.0,
                    wind_capacity_kw=1200.0)
        base.update(overrides)
        return cls(**base).check()

    @classmethod
    def desk(cls, **overrides):
        return cls(**overrides).check()


@dataclass
class RewardParams:
    """Bonus (beta) and penalty (gamma) scales per stakeholder, plus base coefficients."""

    beta: tuple = (0.5, 0.5, 0.5, 0.5, 0.5)
    gamma: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)
    cost_scale: float = 0.1
    wait_coef: float = 0.1
    miss_coef: float = 2.0
    voltage_coef: float = 0.5
    idle_coef: float = 0.2
    task_reward: float = 1.0
    fossil_coef: float = 0.5

    def __post_init__(self):
        for name in ("beta", "gamma"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.shape != (5,) or not np.all(np.isfinite(v)) or np.any(v < 0):
                raise ConfigError(f"{name}: need five finite non-negative scales")


def check_weights(w, tol=1e-9):
    """Validate a five-way stakeholder weight vector and return it as an array."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (5,):
        raise InvariantError(f"weights must have 5 entries, got shape {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvariantError("weights must be finite and non-negative")
    if abs(w.sum() - 1.0) > tol:
        raise InvariantError(f"weights sum to {w.sum():.12g}, expected 1")
    return w


def total_reward(rewards, w):
    """Weighted coordination of the five stakeholder rewards."""
    w = check_weights(w)
    r = np.asarray(rewards, dtype=np.float64)
    if r.shape[-1] != 5:
        raise InvariantError("rewards must have 5 entries")
    return r @ w


def load_json(path):
    with open(path) as fh:
        return json.load(fh)
