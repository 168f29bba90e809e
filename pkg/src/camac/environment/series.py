"""Exogenous time series (weather, traffic, tariffs, background load) generated at reset.

Each series is a deterministic daily shape plus mean-reverting noise driven by
the scenario rng, so a seed fixes the whole day.
"""

from dataclasses import dataclass

import numpy as np

PEAK_HOURS = (17.0, 21.0)
MID_HOURS = (7.0, 17.0)


def ou_noise(rng, n, sigma, theta=0.15):
    """Discrete Ornstein-Uhlenbeck path started at zero with stationary std ``sigma``."""
    x = np.zeros(n)
    if sigma == 0:
        return x
    step_sd = sigma * np.sqrt(1.0 - (1.0 - theta) ** 2)
    eps = rng.standard_normal(n)
    for k in range(1, n):
        x[k] = (1.0 - theta) * x[k - 1] + step_sd * eps[k]
    return x


def is_peak(hour):
    h = np.mod(hour, 24.0)
    return (h >= PEAK_HOURS[0]) & (h < PEAK_HOURS[1])


def tou_tariff(hour, offpeak, mid, peak):
    h = np.mod(hour, 24.0)
    out = np.full(np.shape(h), offpeak, dtype=np.float64)
    out = np.where((h >= MID_HOURS[0]) & (h < MID_HOURS[1]), mid, out)
    return np.where(is_peak(h), peak, out)


@dataclass
class ExogenousSeries:
    hours: np.ndarray
    weekday: np.ndarray
    temperature: np.ndarray
    irradiance: np.ndarray
    precipitation: np.ndarray
    wind_speed: np.ndarray
    congestion: np.ndarray
    travel_time: np.ndarray
    incident: np.ndarray
    tariff: np.ndarray
    background: np.ndarray   # (n_steps, n_transformers) as fraction of capacity
    task_available: np.ndarray  # (n_steps, n_evs) bool

    def __len__(self):
        return len(self.hours)


def generate(config, rng):
    """Pre-generate every exogenous series for ``horizon`` steps plus one hour of lookahead."""
    lookahead = int(np.ceil(60.0 / config.step_minutes))
    n = config.horizon + lookahead + 1
    hours = config.start_hour + np.arange(n) * config.dt_hours
    start_weekday = config.start_weekday if config.start_weekday >= 0 else int(rng.integers(0, 7))
    weekday = (start_weekday + np.floor(hours / 24.0).astype(int)) % 7
    weekend = weekday >= 5
    h = np.mod(hours, 24.0)

    tlo, thi = config.temperature_range
    day_mean = rng.uniform(tlo + 0.2 * (thi - tlo), thi - 0.2 * (thi - tlo))
    day_amp = rng.uniform(2.0, 7.0)
    temperature = day_mean + day_amp * np.sin(2 * np.pi * (h - 9.0) / 24.0)
    temperature = np.clip(temperature + ou_noise(rng, n, config.weather_volatility), tlo, thi)

    cloud = np.clip(rng.uniform(0.0, 0.6) + ou_noise(rng, n, 0.15), 0.0, 1.0)
    precipitation = np.clip(10.0 * (cloud - 0.5) + ou_noise(rng, n, 0.5), 0.0, 10.0)
    sun = np.clip(np.sin(np.pi * (h - 6.0) / 12.0), 0.0, None)
    irradiance = 1000.0 * sun * (1.0 - 0.75 * cloud)

    wind_speed = np.clip(rng.uniform(3.0, 9.0) + ou_noise(rng, n, 2.0), 0.0, 25.0)

    rush = np.exp(-0.5 * ((h - 8.0) / 1.2) ** 2) + np.exp(-0.5 * ((h - 17.5) / 1.5) ** 2)
    congestion = 0.15 + 0.6 * rush * np.where(weekend, 0.5, 1.0)
    congestion = np.clip(congestion + ou_noise(rng, n, config.traffic_volatility), 0.0, 1.0)
    travel_time = 1.0 + 1.5 * congestion
    incident = rng.random(n) < (0.02 + 0.05 * congestion)

    tariff = tou_tariff(h, config.tariff_offpeak, config.tariff_mid, config.tariff_peak)
    tariff = np.clip(tariff + ou_noise(rng, n, config.tariff_volatility), 0.01, None)

    blo, bhi = config.background_load
    shape = 0.5 + 0.5 * np.cos(2 * np.pi * (h - 19.0) / 24.0)
    background = np.empty((n, config.n_transformers))
    for k in range(config.n_transformers):
        b = blo + (bhi - blo) * shape + ou_noise(rng, n, 0.02)
        background[:, k] = np.clip(b, 0.0, 0.55)

    task_available = rng.random((n, config.n_evs)) < config.task_probability

    return ExogenousSeries(
        hours=hours, weekday=weekday, temperature=temperature, irradiance=irradiance,
        precipitation=precipitation, wind_speed=wind_speed, congestion=congestion,
        travel_time=travel_time, incident=incident, tariff=tariff, background=background,
        task_available=task_available,
    )


def wind_power_fraction(speed):
    """Cubic power curve between cut-in 3 m/s and rated 12 m/s; cut-out at 25 m/s."""
    s = np.asarray(speed, dtype=np.float64)
    frac = np.clip((s - 3.0) / 9.0, 0.0, 1.0) ** 3
    return np.where(s >= 25.0, 0.0, frac)
