"""Parametric per-record cost model in virtual cycles.

Every record costs a kind-specific base draw plus a per-byte term for the
sealed payload. Filter draws from a pass or a drop mode. Windowed kinds pay
a light state-update cost per event and, on the event that completes a
window, an emission surcharge ``h0 + h1 * W``. ``jitter`` multiplies every
spread (0 gives a degenerate, noise-free model).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .engine.operators import AVERAGE, AVERAGE_PARTITION, COUNT, FILTER, JOIN, MAP, MAX, REDUCE

# cost classes, as integer codes for vectorised sampling
BASE, HEAVY, DROP = 0, 1, 2
_CLASS_CODE = {"base": BASE, "light": BASE, "pass": BASE, "heavy": HEAVY, "drop": DROP}


class InvalidModel(ValueError):
    pass


@dataclass(frozen=True)
class KindCost:
    loc: float
    scale: float
    # Filter only: the cheaper mode taken by dropped records
    drop_loc: float | None = None
    drop_scale: float | None = None
    # windowed only: emission surcharge h0 + h1*W with its own spread
    h0: float | None = None
    h1: float | None = None
    heavy_scale: float | None = None

    def validate(self, kind: str) -> None:
        params = {"loc": self.loc, "scale": self.scale}
        if kind == FILTER:
            params.update(drop_loc=self.drop_loc, drop_scale=self.drop_scale)
        if kind in (JOIN, MAX, AVERAGE, AVERAGE_PARTITION, COUNT, REDUCE):
            params.update(h0=self.h0, h1=self.h1, heavy_scale=self.heavy_scale)
        for name, value in params.items():
            if value is None or not math.isfinite(value) or value <= 0:
                raise InvalidModel(f"{kind}.{name} must be positive, got {value!r}")


def _default_kinds() -> dict[str, KindCost]:
    return {
        MAP: KindCost(1800, 45),
        FILTER: KindCost(1830, 45, drop_loc=1740, drop_scale=45),
        JOIN: KindCost(2300, 60, h0=1400, h1=45, heavy_scale=150),
        MAX: KindCost(1650, 45, h0=420, h1=24, heavy_scale=60),
        AVERAGE: KindCost(1760, 45, h0=560, h1=15, heavy_scale=60),
        AVERAGE_PARTITION: KindCost(2050, 50, h0=650, h1=22, heavy_scale=70),
        COUNT: KindCost(1450, 35, h0=160, h1=3, heavy_scale=25),
        REDUCE: KindCost(1760, 45, h0=560, h1=15, heavy_scale=60),
    }


@dataclass(frozen=True)
class CostModel:
    kinds: dict = field(default_factory=_default_kinds)
    per_byte: float = 4.0
    jitter: float = 1.0
    spike_prob: float = 0.002
    spike_scale: float = 3000.0
    # residual spread left on a padded record, before jitter scaling
    pad_scale: float = 8.0
    # Filter pass fraction used when synthesising traces without real data
    selectivity: float = 0.5

    def __post_init__(self):
        if self.jitter < 0 or self.per_byte < 0 or not 0 <= self.spike_prob < 1:
            raise InvalidModel("jitter, per_byte and spike_prob must be non-negative")
        if self.spike_scale <= 0 or self.pad_scale <= 0:
            raise InvalidModel("spike_scale and pad_scale must be positive")
        if not 0 <= self.selectivity <= 1:
            raise InvalidModel("selectivity must lie in [0, 1]")
        for kind, cost in self.kinds.items():
            cost.validate(kind)

    def with_jitter(self, jitter: float) -> "CostModel":
        return replace(self, jitter=jitter)

    def cost(self, kind: str) -> KindCost:
        try:
            return self.kinds[kind]
        except KeyError:
            raise InvalidModel(f"no cost entry for {kind!r}") from None

    # -- sampling

    def sample(self, kind: str, classes, window_size: int | None, payload_bytes, rng) -> np.ndarray:
        """Costs for a vector of cost classes (``BASE``/``HEAVY``/``DROP``)."""
        c = self.cost(kind)
        classes = np.asarray(classes)
        n = classes.shape[0]
        loc = np.where(classes == DROP, c.drop_loc or c.loc, c.loc).astype(np.float64)
        scale = np.where(classes == DROP, c.drop_scale or c.scale, c.scale)
        noise = rng.standard_normal(n)
        cost = loc + self.jitter * scale * noise + self.per_byte * np.asarray(payload_bytes, dtype=np.float64)
        if c.h0 is not None:
            heavy = classes == HEAVY
            extra = c.h0 + c.h1 * (window_size or 0) + self.jitter * c.heavy_scale * rng.standard_normal(n)
            cost = cost + np.where(heavy, extra, 0.0)
        if self.jitter > 0 and self.spike_prob > 0:
            spikes = rng.random(n) < self.spike_prob
            cost = cost + np.where(spikes, rng.exponential(self.spike_scale, n), 0.0)
        return np.maximum(np.rint(cost), 1).astype(np.int64)

    def sample_events(self, events, window_sizes: dict, payload_bytes: int, rng) -> int:
        """Cost of one popped record given the (kind, class) events it caused."""
        total = self.per_byte * payload_bytes
        for kind, cls in events:
            c = self.cost(kind)
            code = _CLASS_CODE[cls]
            if code == DROP:
                total += c.drop_loc + self.jitter * c.drop_scale * rng.standard_normal()
            else:
                total += c.loc + self.jitter * c.scale * rng.standard_normal()
            if code == HEAVY:
                total += c.h0 + c.h1 * window_sizes.get(kind, 0) + self.jitter * c.heavy_scale * rng.standard_normal()
        if self.jitter > 0 and self.spike_prob > 0 and rng.random() < self.spike_prob:
            total += rng.exponential(self.spike_scale)
        return max(int(round(total)), 1)

    def pad(self, cost, target: int, rng):
        """Stretch ``cost`` (scalar or array) to at least ``target`` plus residual noise."""
        if target <= 0:
            return cost
        if np.ndim(cost) == 0:
            padded = max(cost, target) + self.jitter * self.pad_scale * rng.standard_normal()
            return max(int(round(padded)), 1)
        cost = np.asarray(cost)
        padded = np.maximum(cost, target) + self.jitter * self.pad_scale * rng.standard_normal(cost.shape)
        return np.maximum(np.rint(padded), 1).astype(np.int64)

    # -- serialisation

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kinds"] = {k: {n: v for n, v in asdict(c).items() if v is not None} for k, c in self.kinds.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CostModel":
        d = dict(d)
        if "kinds" in d:
            kinds = _default_kinds()
            kinds.update({k: KindCost(**v) for k, v in d["kinds"].items()})
            d["kinds"] = kinds
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CostModel":
        return cls.from_dict(json.loads(text))
