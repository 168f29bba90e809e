"""Context state layout: the base block plus 20 normalised context features."""

from dataclasses import dataclass, field

import numpy as np

# canonical order of the 20 context features
FEATURE_NAMES = (
    "temperature", "solar_irradiance", "precipitation", "wind_speed",
    "congestion", "travel_time", "incident",
    "tariff", "next_hour_tariff", "demand_response",
    "mean_loading", "min_voltage", "frequency_deviation", "peak_period",
    "solar_forecast", "wind_forecast", "renewable_share",
    "hour_sin", "hour_cos", "weekend",
)
N_CONTEXT = len(FEATURE_NAMES)

# semantic groups used as attention tokens
TOKEN_GROUPS = (
    ("weather", (0, 1, 2, 3)),
    ("traffic", (4, 5, 6)),
    ("pricing", (7, 8, 9)),
    ("grid", (10, 11, 12, 13)),
    ("renewable", (14, 15, 16)),
    ("temporal", (17, 18, 19)),
)
TOKEN_WIDTH = max(len(ix) for _, ix in TOKEN_GROUPS)
N_TOKENS = len(TOKEN_GROUPS)

# state blocks after the base block; spatial topology lives in the graph
BLOCKS = (
    ("temporal", (17, 18, 19, 7, 8, 9)),
    ("spatial", ()),
    ("grid", (10, 11, 12, 13)),
    ("weather", (0, 1, 2, 3, 14, 15, 16)),
    ("traffic", (4, 5, 6)),
)
BLOCK_ORDER = np.array([i for _, ix in BLOCKS for i in ix], dtype=np.int64)

# per-EV base features
EV_FEATURES = ("soc", "required_soc", "deadline", "capacity", "x", "y", "plugged", "departed")

_TOKEN_INDEX = np.zeros((N_TOKENS, TOKEN_WIDTH), dtype=np.int64)
_TOKEN_MASK = np.zeros((N_TOKENS, TOKEN_WIDTH), dtype=bool)
for _k, (_, _ix) in enumerate(TOKEN_GROUPS):
    _TOKEN_INDEX[_k, :len(_ix)] = _ix
    _TOKEN_MASK[_k, :len(_ix)] = True


def tokens_from_context(context):
    """(..., 20) context -> (..., 6, TOKEN_WIDTH) zero-padded tokens."""
    context = np.asarray(context, dtype=np.float64)
    return np.where(_TOKEN_MASK, context[..., _TOKEN_INDEX], 0.0)


@dataclass
class ContextState:
    """One observation.

    ``base`` holds per-EV features flattened EV-major; ``context`` the 20
    context features in ``FEATURE_NAMES`` order. ``graph`` is the
    infrastructure graph at the same step. ``info`` is scratch space that no
    network reads.
    """

    base: np.ndarray
    context: np.ndarray
    t: int
    graph: object = None
    info: dict = field(default_factory=dict, compare=False)

    def block(self, name):
        if name == "base":
            return self.base
        for bname, ix in BLOCKS:
            if bname == name:
                return self.context[list(ix)]
        raise KeyError(name)

    @property
    def temporal(self):
        return self.block("temporal")

    @property
    def spatial(self):
        return self.block("spatial")

    @property
    def grid(self):
        return self.block("grid")

    @property
    def weather(self):
        return self.block("weather")

    @property
    def traffic(self):
        return self.block("traffic")

    @property
    def n_base(self):
        return len(self.base)

    @property
    def n_ctx(self):
        return len(self.base) + len(BLOCK_ORDER)

    def vector(self):
        """Full state vector: base then the temporal/spatial/grid/weather/traffic blocks."""
        return np.concatenate([self.base, self.context[BLOCK_ORDER]])

    def tokens(self):
        return tokens_from_context(self.context)

    def feature(self, name):
        return float(self.context[FEATURE_NAMES.index(name)])

    def replace_context(self, context):
        return ContextState(self.base.copy(), np.asarray(context, dtype=np.float64), self.t,
                            self.graph, dict(self.info))

    def equals(self, other):
        return (self.t == other.t and np.array_equal(self.base, other.base)
                and np.array_equal(self.context, other.context))
