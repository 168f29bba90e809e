"""Finite catalogue of joint-policy templates scored by the Q-heads.

A template fixes one rule per stakeholder (which EVs charge and where, the
price tier, the transformer cap and the renewable dispatch preference) and
expands to a concrete :class:`JointAction` for the current world.
"""

from dataclasses import dataclass

import numpy as np

from .environment.world import (CHARGE, DEFER, NEUTRAL, PRIORITIZE, SERVE, STAY, JointAction)

PRICE_TIERS = ("low", "mid", "high")


@dataclass(frozen=True)
class Template:
    index: int
    mode: str              # "none", "threshold" or "needed"
    threshold: float
    station_rule: str      # "nearest" or "cheapest"
    price_tier: int
    grid_cap: float
    env_pref: int

    @property
    def name(self):
        if self.mode == "none":
            head = "no-charge"
        elif self.mode == "needed":
            head = "charge-below-target"
        else:
            head = f"charge-below-{self.threshold:.1f}"
        return f"{head}/{self.station_rule}/{PRICE_TIERS[self.price_tier]}"

    @property
    def charges(self):
        return self.mode != "none"


def build_catalog():
    """24 templates: 8 charging modes x 3 station price tiers."""
    modes = [("none", 0.0, "nearest")]
    for thr in (0.3, 0.5, 0.7):
        modes += [("threshold", thr, "nearest"), ("threshold", thr, "cheapest")]
    modes.append(("needed", 1.0, "nearest"))
    out = []
    for mode, thr, rule in modes:
        for tier in range(3):
            out.append(Template(
                index=len(out), mode=mode, threshold=thr, station_rule=rule, price_tier=tier,
                grid_cap=0.8 if tier == 2 else 1.0,
                env_pref=PRIORITIZE if rule == "cheapest" else NEUTRAL,
            ))
    return tuple(out)


CATALOG = build_catalog()
N_TEMPLATES = len(CATALOG)


def find_template(mode, threshold=None, station_rule="nearest", price_tier=1):
    for tpl in CATALOG:
        if (tpl.mode == mode and tpl.station_rule == station_rule and tpl.price_tier == price_tier
                and (threshold is None or abs(tpl.threshold - threshold) < 1e-12)):
            return tpl.index
    raise KeyError((mode, threshold, station_rule, price_tier))


def _pick_station(world, i, free, prices, rule):
    d = np.linalg.norm(world.station_pos - world.ev_pos[i], axis=1)
    if rule == "cheapest":
        order = np.lexsort((d, prices))
    else:
        order = np.argsort(d, kind="stable")
    for j in order:
        if free[j] > 0:
            return int(j)
    return int(order[0])


def expand(template, world):
    """Concrete joint action of ``template`` in the world's current state."""
    tpl = CATALOG[template] if isinstance(template, (int, np.integer)) else template
    cfg = world.config
    ev = np.full(cfg.n_evs, DEFER, dtype=np.int64)
    fleet = np.where(world.ev_class == 2, SERVE, -1).astype(np.int64)
    station = np.full(cfg.n_stations, tpl.price_tier, dtype=np.int64)
    grid = np.full(cfg.n_transformers, tpl.grid_cap)
    if tpl.charges:
        prices = world.station_prices(price_tier=station)
        free = np.array([world.station_ports[j] - len(world.occupants[j]) - len(world.queues[j])
                         for j in range(cfg.n_stations)])
        for i in range(cfg.n_evs):
            if world.ev_departed[i]:
                continue
            soc = world.ev_soc[i]
            target = max(world.ev_required[i], tpl.threshold) if tpl.mode == "threshold" else world.ev_required[i]
            engaged = world.ev_plugged[i] >= 0 or world.ev_queued[i] >= 0
            start = soc < (tpl.threshold if tpl.mode == "threshold" else world.ev_required[i])
            if engaged and soc < target:
                ev[i] = STAY
            elif start and not engaged:
                j = _pick_station(world, i, free, prices, tpl.station_rule)
                free[j] -= 1
                ev[i] = j
            else:
                continue
            if world.ev_class[i] == 2:
                fleet[i] = CHARGE
    return JointAction(ev=ev, grid=grid, station=station, fleet=fleet, env=tpl.env_pref)
