"""Discrete-time charging world: EVs, stations, transformers and exogenous context."""

from collections import deque
from dataclasses import dataclass

import numpy as np

from ..errors import ActionError
from ..graph import NODE_FEATURES, Topology, build_graph
from . import series as S
from .config import TIER_POWER, TIERS, RewardParams, ScenarioConfig, largest_remainder
from .rewards import StepOutcome, stakeholder_rewards
from .state import ContextState

STAY, DEFER = -1, -2
SERVE, REPOSITION, CHARGE = 0, 1, 2
CURTAIL, NEUTRAL, PRIORITIZE = 0, 1, 2
CAP_LEVELS = (0.6, 0.8, 1.0)
PRICE_FACTOR = np.array([0.85, 1.0, 1.2])      # low / mid / high price tier
TIER_MARKUP = np.array([1.0, 1.3, 1.6])        # level2 / dc_fast / high_power
TARIFF_MAX = 0.6                                # $/kWh normalisation bound
LOW_SOC = 0.05
COMPLEXITY_WINDOW = 8


@dataclass
class JointAction:
    """One action per stakeholder agent type.

    ev : (n_evs,) int, ``STAY``, ``DEFER`` or a station index to charge at
    grid : (n_transformers,) power cap as a fraction of capacity, from ``CAP_LEVELS``
    station : (n_stations,) price tier 0/1/2 (low/mid/high)
    fleet : (n_evs,) int, -1 for non-commercial EVs else SERVE/REPOSITION/CHARGE
    env : CURTAIL / NEUTRAL / PRIORITIZE renewable dispatch preference
    """

    ev: np.ndarray
    grid: np.ndarray
    station: np.ndarray
    fleet: np.ndarray
    env: int = NEUTRAL

    def validate(self, world):
        cfg = world.config
        issues = []
        ev = np.asarray(self.ev)
        if ev.shape != (cfg.n_evs,):
            issues.append(f"ev: expected {cfg.n_evs} entries")
        elif np.any((ev < DEFER) | (ev >= cfg.n_stations)):
            issues.append("ev: station index out of range")
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid.shape != (cfg.n_transformers,):
            issues.append(f"grid: expected {cfg.n_transformers} entries")
        elif not np.all(np.isin(np.round(grid, 12), CAP_LEVELS)):
            issues.append(f"grid: cap levels must be in {CAP_LEVELS}")
        st = np.asarray(self.station)
        if st.shape != (cfg.n_stations,) or np.any((st < 0) | (st > 2)):
            issues.append("station: need one price tier 0..2 per station")
        fl = np.asarray(self.fleet)
        if fl.shape != (cfg.n_evs,):
            issues.append(f"fleet: expected {cfg.n_evs} entries")
        else:
            com = world.ev_class == 2
            if np.any(fl[~com] != -1) or np.any((fl[com] < 0) | (fl[com] > 2)):
                issues.append("fleet: -1 for non-commercial EVs, 0..2 for commercial")
        if self.env not in (CURTAIL, NEUTRAL, PRIORITIZE):
            issues.append("env: must be 0, 1 or 2")
        if issues:
            raise ActionError("; ".join(issues))


def thermal_derate(temperature):
    """Available charge power fraction: 1 above 0 C, linear down to 0.6 at -10 C."""
    return float(np.clip(1.0 + 0.04 * min(temperature, 0.0), 0.6, 1.0))


def normalize(value, lo, hi):
    return float(np.clip((value - lo) / (hi - lo), 0.0, 1.0))


def context_features(raw, temperature_range=(-10.0, 40.0)):
    """Map raw world readings to the 20 normalised features.

    ``raw`` keys: temperature, irradiance, precipitation, wind_speed,
    congestion, travel_time, incident, tariff, next_tariff, background_loading,
    mean_loading, min_voltage, frequency_deviation, peak, solar_forecast,
    wind_forecast, renewable_share, hour, weekend.
    """
    tlo, thi = temperature_range
    hour = raw["hour"]
    return np.array([
        normalize(raw["temperature"], tlo, thi),
        normalize(raw["irradiance"], 0.0, 1000.0),
        normalize(raw["precipitation"], 0.0, 10.0),
        normalize(raw["wind_speed"], 0.0, 25.0),
        normalize(raw["congestion"], 0.0, 1.0),
        normalize(raw["travel_time"], 1.0, 2.5),
        1.0 if raw["incident"] else 0.0,
        normalize(raw["tariff"], 0.0, TARIFF_MAX),
        normalize(raw["next_tariff"], 0.0, TARIFF_MAX),
        normalize(raw["background_loading"], 0.35, 0.55),
        normalize(raw["mean_loading"], 0.0, 1.0),
        normalize(raw["min_voltage"], 0.8, 1.1),
        float(np.clip(raw["frequency_deviation"] / 0.2, -1.0, 1.0)),
        1.0 if raw["peak"] else 0.0,
        normalize(raw["solar_forecast"], 0.0, 1.0),
        normalize(raw["wind_forecast"], 0.0, 1.0),
        normalize(raw["renewable_share"], 0.0, 1.0),
        float(np.sin(2 * np.pi * hour / 24.0)),
        float(np.cos(2 * np.pi * hour / 24.0)),
        1.0 if raw["weekend"] else 0.0,
    ])


def context_complexity(windows, max_std):
    """Mean of clamped normalised std-devs of the four volatility series.

    ``windows`` is a sequence of four 1-D arrays (temperature, congestion,
    transformer loading, tariff) holding the most recent values.
    """
    scores = []
    for w, s in zip(windows, max_std):
        w = np.asarray(w, dtype=np.float64)
        sd = float(np.std(w)) if w.size > 1 else 0.0
        scores.append(min(1.0, sd / s))
    return float(np.mean(scores))


def voltage_from_loading(loading):
    return np.clip(1.02 - 0.1 * np.asarray(loading), 0.8, 1.1)


class ChargingWorld:
    """Single-writer simulator. ``reset`` then repeated ``step`` calls."""

    def __init__(self, config=None, reward_params=None):
        self.config = (config or ScenarioConfig()).check()
        self.reward_params = reward_params or RewardParams()
        self.t = 0
        self.last_outcome = None

    # ------------------------------------------------------------------ reset
    def reset(self, seed=None):
        cfg = self.config
        seed = cfg.seed if seed is None else seed
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.rng = rng
        n, m = cfg.n_evs, cfg.n_stations

        cols = int(np.ceil(np.sqrt(m)))
        rows = int(np.ceil(m / cols))
        cell = np.array([cfg.area_km / cols, cfg.area_km / rows])
        idx = np.arange(m)
        centers = np.stack([(idx % cols + 0.5), (idx // cols + 0.5)], axis=1) * cell
        self.station_pos = centers + rng.uniform(-0.1, 0.1, size=(m, 2)) * cell

        self.tier_counts = largest_remainder(cfg.tier_mix, m)
        tiers = np.repeat(np.arange(3), self.tier_counts)
        self.station_tier = rng.permutation(tiers)
        self.station_power = np.array([rng.uniform(*TIER_POWER[TIERS[k]]) for k in self.station_tier])
        self.station_ports = np.full(m, cfg.ports_per_station, dtype=np.int64)
        self.station_transformer = np.arange(m) % cfg.n_transformers
        self.station_operator = np.arange(m) % cfg.n_operators
        self.station_price_tier = np.ones(m, dtype=np.int64)
        self.occupants = [[] for _ in range(m)]
        self.queues = [deque() for _ in range(m)]

        self.class_counts = largest_remainder(cfg.fleet_mix, n)
        self.ev_class = rng.permutation(np.repeat(np.arange(3), self.class_counts))
        lo, hi = cfg.battery_range
        mid = 0.5 * (lo + hi)
        self.ev_capacity = np.where(self.ev_class == 0, rng.uniform(lo, mid, n), rng.uniform(mid, hi, n))
        self.ev_soc = rng.uniform(0.2, 0.8, n)
        self.ev_pos = rng.uniform(0.0, cfg.area_km, size=(n, 2))
        self.ev_required = rng.uniform(0.6, 0.95, n)
        self.ev_deadline = rng.integers(cfg.horizon // 2, cfg.horizon + 1, n)
        self.ev_plugged = np.full(n, -1, dtype=np.int64)
        self.ev_queued = np.full(n, -1, dtype=np.int64)
        self.ev_departed = np.zeros(n, dtype=bool)
        self.ev_wait = np.zeros(n, dtype=np.int64)

        self.capacity = np.full(cfg.n_transformers, float(cfg.transformer_capacity_kw))
        self.cap_level = np.ones(cfg.n_transformers)
        self.series = S.generate(cfg, rng)
        self.lookahead = int(np.ceil(60.0 / cfg.step_minutes))

        self.t = 0
        self.loading = self.series.background[0].copy()
        self.voltage = voltage_from_loading(self.loading)
        self.renewable_share = self._renewable_share(0, self.loading @ self.capacity)
        self.history = {k: [] for k in ("temperature", "congestion", "loading", "tariff")}
        self._record_history()
        self.last_outcome = None
        self.topology = Topology(n, self.station_pos, self.station_transformer,
                                 self.station_operator, cfg.n_transformers, cfg.n_operators,
                                 cfg.near_radius_km)
        self.state = self.assemble_state()
        return self.state

    # ---------------------------------------------------------------- helpers
    def _renewable_kw(self, t):
        cfg = self.config
        sv = self.series
        return (cfg.solar_capacity_kw * sv.irradiance[t] / 1000.0
                + cfg.wind_capacity_kw * float(S.wind_power_fraction(sv.wind_speed[t])))

    def _renewable_share(self, t, total_load_kw):
        if total_load_kw <= 0:
            return 0.0
        return float(min(1.0, self._renewable_kw(t) / total_load_kw))

    def _record_history(self):
        t = self.t
        self.history["temperature"].append(float(self.series.temperature[t]))
        self.history["congestion"].append(float(self.series.congestion[t]))
        self.history["loading"].append(float(np.mean(self.loading)))
        self.history["tariff"].append(float(self.series.tariff[t]))

    def station_prices(self, t=None, price_tier=None):
        t = self.t if t is None else t
        tier = self.station_price_tier if price_tier is None else np.asarray(price_tier)
        return self.series.tariff[t] * TIER_MARKUP[self.station_tier] * PRICE_FACTOR[tier]

    def active(self):
        return ~self.ev_departed

    def hour(self, t=None):
        return float(np.mod(self.series.hours[self.t if t is None else t], 24.0))

    def context_complexity(self):
        w = [np.asarray(self.history[k][-COMPLEXITY_WINDOW:]) for k in
             ("temperature", "congestion", "loading", "tariff")]
        return context_complexity(w, self.config.complexity_max_std)

    # ----------------------------------------------------------------- state
    def raw_readings(self, t=None):
        t = self.t if t is None else t
        sv = self.series
        cfg = self.config
        solar_fc = sv.irradiance[t + 1] / 1000.0
        return dict(
            temperature=sv.temperature[t], irradiance=sv.irradiance[t],
            precipitation=sv.precipitation[t], wind_speed=sv.wind_speed[t],
            congestion=sv.congestion[t], travel_time=sv.travel_time[t], incident=sv.incident[t],
            tariff=sv.tariff[t], next_tariff=sv.tariff[t + self.lookahead],
            background_loading=float(np.mean(sv.background[t])),
            mean_loading=float(np.mean(self.loading)), min_voltage=float(np.min(self.voltage)),
            frequency_deviation=float(np.clip(0.25 * (np.mean(self.loading) - 0.5), -0.2, 0.2)),
            peak=bool(S.is_peak(sv.hours[t])),
            solar_forecast=solar_fc if cfg.solar_capacity_kw > 0 else 0.0,
            wind_forecast=float(S.wind_power_fraction(sv.wind_speed[t + 1])) if cfg.wind_capacity_kw > 0 else 0.0,
            renewable_share=self.renewable_share, hour=float(np.mod(sv.hours[t], 24.0)),
            weekend=bool(sv.weekday[t] >= 5),
        )

    def base_features(self):
        cfg = self.config
        plugged = np.where(self.ev_plugged >= 0, 1.0, np.where(self.ev_queued >= 0, 0.5, 0.0))
        cols = [self.ev_soc, self.ev_required, self.ev_deadline / cfg.horizon,
                self.ev_capacity / 200.0, self.ev_pos[:, 0] / cfg.area_km,
                self.ev_pos[:, 1] / cfg.area_km, plugged, self.ev_departed.astype(float)]
        return np.stack(cols, axis=1).reshape(-1)

    def node_features(self):
        cfg = self.config
        n, m, k, o = cfg.n_evs, cfg.n_stations, cfg.n_transformers, cfg.n_operators
        X = np.zeros((n + m + k + o, NODE_FEATURES))
        X[:n, 0] = 1.0
        X[:n, 4] = self.ev_soc
        X[:n, 5] = self.ev_required
        X[:n, 6] = (self.ev_plugged >= 0)
        X[:n, 7] = self.ev_departed
        occ = np.array([len(x) for x in self.occupants]) / self.station_ports
        prices = self.station_prices()
        X[n:n + m, 1] = 1.0
        X[n:n + m, 4] = occ
        X[n:n + m, 5] = self.station_power / 350.0
        X[n:n + m, 6] = np.clip(prices / TARIFF_MAX, 0.0, 1.0)
        X[n:n + m, 7] = np.clip(np.array([len(q) for q in self.queues]) / self.station_ports, 0.0, 1.0)
        X[n + m:n + m + k, 2] = 1.0
        X[n + m:n + m + k, 4] = np.clip(self.loading, 0.0, 1.0)
        X[n + m:n + m + k, 5] = np.clip((self.voltage - 0.8) / 0.3, 0.0, 1.0)
        X[n + m:n + m + k, 6] = self.cap_level
        X[n + m:n + m + k, 7] = self.series.background[self.t]
        X[n + m + k:, 3] = 1.0
        for op in range(o):
            mine = self.station_operator == op
            if np.any(mine):
                X[n + m + k + op, 4] = occ[mine].mean()
                X[n + m + k + op, 5] = np.clip(prices[mine].mean() / TARIFF_MAX, 0.0, 1.0)
        return X

    def assemble_state(self):
        ctx = context_features(self.raw_readings(), self.config.temperature_range)
        graph = build_graph(self.topology, self.ev_pos, self.ev_plugged, self.active(),
                            self.node_features())
        return ContextState(self.base_features(), ctx, self.t, graph,
                            info={"complexity": self.context_complexity()})

    # ------------------------------------------------------------------ step
    def _leave(self, i):
        j = self.ev_plugged[i]
        if j >= 0:
            self.occupants[j].remove(i)
            self.ev_plugged[i] = -1
        j = self.ev_queued[i]
        if j >= 0:
            self.queues[j].remove(i)
            self.ev_queued[i] = -1

    def step(self, action, alpha_adapt=1.0):
        """Apply a joint action. Returns ``(next_state, rewards[5], done)``."""
        cfg = self.config
        if self.t >= cfg.horizon:
            raise ActionError("episode is over; call reset()")
        action.validate(self)
        t = self.t
        dt = cfg.dt_hours
        eta = cfg.eta_chg
        sv = self.series

        self.station_price_tier = np.asarray(action.station, dtype=np.int64).copy()
        self.cap_level = np.asarray(action.grid, dtype=np.float64).copy()
        prices = self.station_prices(t)

        # movement decisions, EV id order
        serving = np.zeros(cfg.n_evs, dtype=bool)
        for i in range(cfg.n_evs):
            if self.ev_departed[i]:
                continue
            code = int(action.ev[i])
            if self.ev_class[i] == 2 and action.fleet[i] != CHARGE:
                self._leave(i)
                if action.fleet[i] == SERVE:
                    serving[i] = True
                else:
                    d = np.linalg.norm(self.station_pos - self.ev_pos[i], axis=1)
                    self.ev_pos[i] += 0.5 * (self.station_pos[int(np.argmin(d))] - self.ev_pos[i])
                continue
            if code == DEFER:
                self._leave(i)
            elif code >= 0 and self.ev_plugged[i] != code and self.ev_queued[i] != code:
                self._leave(i)
                self.queues[code].append(i)
                self.ev_queued[i] = code

        # FIFO admission into free ports
        for j in range(cfg.n_stations):
            q = self.queues[j]
            while q and len(self.occupants[j]) < self.station_ports[j]:
                i = q.popleft()
                self.ev_queued[i] = -1
                self.ev_plugged[i] = j
                self.occupants[j].append(i)
                self.ev_pos[i] = self.station_pos[j]
        queued = np.flatnonzero(self.ev_queued >= 0)
        self.ev_wait[queued] += 1
        queue_overflow = sum(max(0, len(q) - cfg.queue_limit) for q in self.queues)

        # requested charge power
        derate = thermal_derate(sv.temperature[t])
        headroom = (1.0 - self.ev_soc) * self.ev_capacity / (dt * eta)
        power = np.zeros(cfg.n_evs)
        plugged = np.flatnonzero(self.ev_plugged >= 0)
        power[plugged] = np.minimum(self.station_power[self.ev_plugged[plugged]] * derate,
                                    headroom[plugged])
        power = np.maximum(power, 0.0)
        allocated_kw = power.sum()
        if len(queued):
            allocated_kw += np.minimum(self.station_power[self.ev_queued[queued]] * derate,
                                       headroom[queued]).clip(0.0).sum()

        renewable_kw = self._renewable_kw(t)
        background_kw = sv.background[t] * self.capacity
        if action.env == PRIORITIZE and power.sum() > 0:
            ratio = np.clip(renewable_kw / (background_kw.sum() + power.sum()), 0.3, 1.0)
            flexible = self.ev_soc >= self.ev_required
            power[flexible] *= ratio

        # transformer caps: scale station draw proportionally
        ev_transformer = np.where(self.ev_plugged >= 0,
                                  self.station_transformer[np.maximum(self.ev_plugged, 0)], -1)
        for k in range(cfg.n_transformers):
            on_k = ev_transformer == k
            demand = power[on_k].sum()
            avail = max(0.0, self.cap_level[k] * self.capacity[k] - background_kw[k])
            if demand > avail:
                power[on_k] *= avail / demand

        metered = power * dt
        soc_before = self.ev_soc.copy()
        self.ev_soc = np.minimum(1.0, self.ev_soc + metered * eta / self.ev_capacity)
        station_metered = np.bincount(self.ev_plugged[plugged], weights=metered[plugged],
                                      minlength=cfg.n_stations)
        ev_price = np.where(self.ev_plugged >= 0, prices[np.maximum(self.ev_plugged, 0)], 0.0)
        ev_cost = metered * ev_price
        utilization = np.array([len(x) for x in self.occupants]) / self.station_ports

        station_kw = np.bincount(self.station_transformer, weights=station_metered / dt,
                                 minlength=cfg.n_transformers)
        load = background_kw + station_kw
        self.loading = load / self.capacity
        self.voltage = voltage_from_loading(self.loading)
        total_load = float(load.sum())
        usable_renewable = renewable_kw * (0.8 if action.env == CURTAIL else 1.0)
        share = float(min(1.0, usable_renewable / total_load)) if total_load > 0 else 0.0
        self.renewable_share = share

        # fleet tasks drain commercial batteries
        drain = np.zeros(cfg.n_evs)
        tasks = 0
        for i in np.flatnonzero(serving):
            need = cfg.task_kwh / self.ev_capacity[i]
            if sv.task_available[t, i] and self.ev_soc[i] - need >= 0.1:
                self.ev_soc[i] -= need
                drain[i] = cfg.task_kwh
                tasks += 1

        # full EVs release their port
        for i in plugged:
            if self.ev_soc[i] >= 1.0:
                self._leave(i)

        # deadlines falling at t+1
        due = np.flatnonzero((self.ev_deadline == t + 1) & ~self.ev_departed)
        misses = int(np.sum(self.ev_soc[due] < self.ev_required[due] - 1e-12))
        for i in due:
            self._leave(i)
            self.ev_departed[i] = True

        idle = int(sum(self.station_ports[j] - len(self.occupants[j]) for j in range(cfg.n_stations)))
        active = ~self.ev_departed
        commercial = self.ev_class == 2
        outcome = StepOutcome(
            t=t, dt_hours=dt,
            energy_cost=float(ev_cost.sum()),
            commercial_energy_cost=float(ev_cost[commercial].sum()),
            waiting_evs=len(queued), deadline_misses=misses, queue_overflow=queue_overflow,
            price_cap_violations=int(np.sum(prices > cfg.price_cap)),
            loading=self.loading.copy(), voltage=self.voltage.copy(),
            overload_threshold=cfg.overload_threshold,
            revenue=float((station_metered * prices).sum()), idle_ports=idle,
            utilization=utilization, price_tier=self.station_price_tier.copy(),
            tasks_served=tasks, n_commercial=int(commercial.sum()),
            congestion=float(sv.congestion[t]),
            delivered_kwh=float(metered.sum()), allocated_kwh=float(allocated_kw * dt),
            renewable_share=share, renewable_kw=usable_renewable,
            background_kw=float(background_kw.sum()), ev_load_kw=float(station_kw.sum()),
            curtailed_fraction=0.2 if (action.env == CURTAIL and renewable_kw > 0) else 0.0,
            peak=bool(S.is_peak(sv.hours[t])),
            low_soc_evs=int(np.sum(self.ev_soc[active] < LOW_SOC)),
            ev_metered_kwh=metered, ev_drain_kwh=drain, station_metered_kwh=station_metered,
        )
        outcome.soc_before = soc_before
        outcome.ev_cost = ev_cost
        self.last_outcome = outcome

        self.t = t + 1
        self._record_history()
        rewards = stakeholder_rewards(outcome, alpha_adapt, self.reward_params)
        done = self.t >= cfg.horizon
        self.state = self.assemble_state()
        return self.state, rewards, done

    def invariant_violations(self):
        """Port, SOC and cap checks on the current world (empty list when clean)."""
        bad = []
        for j in range(self.config.n_stations):
            if len(self.occupants[j]) > self.station_ports[j]:
                bad.append(f"station {j}: {len(self.occupants[j])} occupants > {self.station_ports[j]} ports")
        if np.any(self.ev_soc < 0) or np.any(self.ev_soc > 1):
            bad.append("soc outside [0, 1]")
        if self.t > 0:
            cap = self.cap_level * self.capacity
            over = self.loading * self.capacity > cap + 1e-9
            if np.any(over):
                bad.append(f"transformers over cap: {np.flatnonzero(over).tolist()}")
        return bad


def idle_action(world, ev_code=STAY):
    """Joint action where every EV takes ``ev_code``, mid prices, full caps, neutral dispatch."""
    cfg = world.config
    fleet = np.where(world.ev_class == 2, CHARGE, -1)
    return JointAction(ev=np.full(cfg.n_evs, ev_code, dtype=np.int64),
                       grid=np.ones(cfg.n_transformers), station=np.ones(cfg.n_stations, dtype=np.int64),
                       fleet=fleet, env=NEUTRAL)
