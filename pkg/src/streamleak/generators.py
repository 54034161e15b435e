"""Benchmark data and query suites.

NEXMark-style Person/Auction/Bid streams share one logical timeline (``ts``
is the global event index). Flight records stand in for the SecureStream
dataset. ``catalog_query`` builds the operator DAGs of the six deployed
NEXMark queries and the SecureStream pipeline.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from .engine.operators import (
    AVERAGE,
    AVERAGE_PARTITION,
    COUNT,
    FILTER,
    JOIN,
    MAP,
    MAX,
    REDUCE,
    OperatorSpec,
)
from .engine.pipeline import PipelineSpec, Source, StageSpec
from .engine.records import AUCTION, BID, FLIGHT, PERSON, SCHEMAS, EventRecord
from .rng import PRNG_NAME, rng

_FIRST = np.array(["Ada", "Bo", "Cy", "Dee", "Eli", "Fay", "Gus", "Hal", "Ivy", "Jo", "Kai", "Lu"])
_LAST = np.array(["Smith", "Ng", "Okafor", "Silva", "Kowalski", "Haddad", "Tanaka", "Berg"])
_STATES = np.array(["OR", "ID", "CA", "WA", "AZ", "NV", "TX", "NY", "FL", "MA"])
_CITIES = np.array(["Portland", "Boise", "Fresno", "Seattle", "Phoenix", "Reno", "Austin", "Albany"])
_CARRIERS = np.array(["AA", "DL", "UA", "WN", "AS", "B6", "NK", "F9", "HA", "G4"])
_AIRPORTS = np.array(["ATL", "ORD", "DFW", "DEN", "LAX", "SEA", "SFO", "JFK", "BOS", "PHX", "MSP", "DTW"])
_WORDS = np.array(["lamp", "desk", "vase", "coin", "book", "card", "bike", "clock", "chair", "rug"])


@dataclass
class GeneratorConfig:
    seed: int = 0
    persons: int = 20_000
    auctions: int = 60_000
    bids: int = 920_000
    flights: int = 100_000
    rate_profile: str = "uniform"  # or "bursty"
    price_range: tuple[float, float] = (1.0, 10_000.0)
    categories: int = 10
    # share of references that go to one of the newest entities
    hot_ratio: float = 0.9
    hot_auctions: int = 4
    hot_persons: int = 4
    fraction_delayed: float = 0.45
    fraction_on_time: float = 0.2
    prng: str = PRNG_NAME

    def __post_init__(self):
        if min(self.persons, self.auctions, self.bids, self.flights) < 0:
            raise ValueError("event counts must be non-negative")
        if self.bids and not (self.persons and self.auctions) or self.auctions and not self.persons:
            raise ValueError("bids need persons and auctions to refer to")
        if self.categories < 1 or not 0 <= self.hot_ratio <= 1 or not 0 < self.price_range[0] < self.price_range[1]:
            raise ValueError("categories >= 1, hot_ratio in [0, 1] and 0 < low price < high price")
        if self.rate_profile not in ("uniform", "bursty"):
            raise ValueError(f"unknown rate profile {self.rate_profile!r}")
        if not 0 <= self.fraction_delayed <= 1 or not 0 <= self.fraction_on_time <= 1 - self.fraction_delayed:
            raise ValueError("delay fractions must be within [0, 1] and sum to at most 1")
        if self.prng != PRNG_NAME:
            raise ValueError(f"only {PRNG_NAME} is supported")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        if "price_range" in d:
            d["price_range"] = tuple(d["price_range"])
        return cls(**d)


@dataclass
class EventStream:
    """Column-stored stream of one schema; iterating yields EventRecords."""

    schema: str
    columns: dict[str, np.ndarray]
    ts: np.ndarray
    fields: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.fields:
            self.fields = tuple(self.columns)

    def __len__(self) -> int:
        return len(self.ts)

    def record(self, i: int) -> EventRecord:
        return EventRecord(i, self.schema, tuple((n, self.columns[n][i].item()) for n in self.fields), int(self.ts[i]))

    def __iter__(self) -> Iterator[EventRecord]:
        cols = [self.columns[n].tolist() for n in self.fields]
        ts = self.ts.tolist()
        names = self.fields
        for i in range(len(ts)):
            yield EventRecord(i, self.schema, tuple(zip(names, (c[i] for c in cols))), ts[i])

    def head(self, n: int) -> "EventStream":
        return EventStream(self.schema, {k: v[:n] for k, v in self.columns.items()}, self.ts[:n], self.fields)

    def write_jsonl(self, fh) -> None:
        cols = [self.columns[n].tolist() for n in self.fields]
        for i, ts in enumerate(self.ts.tolist()):
            body = {n: c[i] for n, c in zip(self.fields, cols)}
            fh.write(json.dumps({"schema": self.schema, "seq": i, "ts": ts, "fields": body}, separators=(",", ":")))
            fh.write("\n")


def _arrivals(gen: np.random.Generator, n: int, profile: str) -> np.ndarray:
    if profile == "uniform":
        gaps = gen.exponential(1.0, n)
    else:
        # on/off bursts: gamma gaps with a heavy tail
        gaps = gen.gamma(0.3, 1.0 / 0.3, n)
    return np.cumsum(gaps)


def gen_nexmark(cfg: GeneratorConfig) -> dict[str, EventStream]:
    """Person, Auction and Bid streams with referential integrity.

    Every auction's seller and every bid's bidder is a generated person;
    every bid references a generated auction, preferring ones already opened.
    """
    counts = (cfg.persons, cfg.auctions, cfg.bids)
    if min(counts) <= 0:
        raise ValueError("entity counts must be positive")
    gen = rng(cfg.seed, "nexmark")
    total = sum(counts)
    arrivals = _arrivals(gen, total, cfg.rate_profile)
    kinds = np.repeat(np.arange(3), counts)
    gen.shuffle(kinds)
    ts_all = np.arange(total, dtype=np.int64)
    p_ts, a_ts, b_ts = (ts_all[kinds == k] for k in range(3))
    del arrivals  # arrival gaps only shape the interleave; ts is the event index

    n_p, n_a, n_b = counts
    first = gen.integers(0, len(_FIRST), n_p)
    last = gen.integers(0, len(_LAST), n_p)
    pid = np.arange(n_p, dtype=np.int64)
    names = np.char.add(np.char.add(_FIRST[first], " "), _LAST[last])
    emails = np.char.add(np.char.add(np.char.lower(_FIRST[first]), pid.astype(str)), "@mail.test")
    persons = EventStream(PERSON, {
        "id": pid,
        "name": names.astype(object),
        "email": emails.astype(object),
        "state": _STATES[gen.integers(0, len(_STATES), n_p)].astype(object),
        "city": _CITIES[gen.integers(0, len(_CITIES), n_p)].astype(object),
    }, p_ts)

    def earlier(ref_ts, when, n_ref, hot):
        # an entity that already exists at ``when``; mostly one of the ``hot`` newest
        avail = np.searchsorted(ref_ts, when)
        upper = np.where(avail > 0, avail, n_ref)
        anyone = (gen.random(len(when)) * upper).astype(np.int64)
        recent = upper - 1 - gen.integers(0, hot, len(when))
        pick = np.where(gen.random(len(when)) < cfg.hot_ratio, recent, anyone)
        return np.clip(pick, 0, n_ref - 1)

    aid = np.arange(n_a, dtype=np.int64)
    lo, hi = cfg.price_range
    auctions = EventStream(AUCTION, {
        "id": aid,
        "item": np.char.add(_WORDS[gen.integers(0, len(_WORDS), n_a)], aid.astype(str)).astype(object),
        "category": gen.integers(0, cfg.categories, n_a),
        "seller": earlier(p_ts, a_ts, n_p, cfg.hot_persons),
        "initial_bid": np.round(gen.uniform(lo, hi / 10, n_a), 2),
        "expires": a_ts + gen.integers(100, 10_000, n_a),
    }, a_ts)
    bids = EventStream(BID, {
        "auction": earlier(a_ts, b_ts, n_a, cfg.hot_auctions),
        "bidder": gen.integers(0, n_p, n_b),
        "price": np.round(np.clip(gen.lognormal(5.0, 1.0, n_b), lo, hi), 2),
        "dt": b_ts.copy(),
    }, b_ts)
    return {"persons": persons, "auctions": auctions, "bids": bids}


def gen_flights(cfg: GeneratorConfig, n: int | None = None) -> EventStream:
    """Synthetic flight records; delay > 0 with probability ``fraction_delayed``."""
    n = cfg.flights if n is None else n
    if n <= 0:
        raise ValueError("flight count must be positive")
    gen = rng(cfg.seed, "flights")
    mode = gen.random(n)
    delayed = mode < cfg.fraction_delayed
    on_time = (~delayed) & (mode < cfg.fraction_delayed + cfg.fraction_on_time)
    early = ~(delayed | on_time)
    delay = np.zeros(n)
    delay[delayed] = np.round(1.0 + gen.exponential(35.0, delayed.sum()), 1)
    delay[early] = -np.round(1.0 + gen.exponential(8.0, early.sum()), 1)
    origin = gen.integers(0, len(_AIRPORTS), n)
    dest = (origin + gen.integers(1, len(_AIRPORTS), n)) % len(_AIRPORTS)
    return EventStream(FLIGHT, {
        "carrier_id": _CARRIERS[gen.integers(0, len(_CARRIERS), n)].astype(object),
        "origin": _AIRPORTS[origin].astype(object),
        "dest": _AIRPORTS[dest].astype(object),
        "distance": np.round(gen.uniform(150, 2800, n), 0),
        "delay": delay,
    }, np.arange(n, dtype=np.int64))


def _random_column(gen: np.random.Generator, kind: type, n: int) -> np.ndarray:
    if kind is int:
        return gen.integers(0, 1_000_000, n)
    if kind is float:
        return np.round(gen.uniform(0, 10_000, n), 2)
    letters = np.array(list("abcdefghijklmnopqrstuvwxyz"))
    lengths = gen.integers(3, 13, n)
    chars = letters[gen.integers(0, 26, (n, 12))]
    return np.array(["".join(row[:k]) for row, k in zip(chars, lengths)], dtype=object)


def synth_schema_subsets(schema: str | tuple, seed: int, n_variants: int,
                         n_records: int = 256) -> list[tuple[tuple[str, ...], EventStream]]:
    """Random non-empty field subsets of ``schema`` with random typed values."""
    fields = SCHEMAS[schema] if isinstance(schema, str) else tuple(schema)
    name = schema if isinstance(schema, str) else "Derived"
    if not fields:
        raise ValueError("schema needs at least one field")
    gen = rng(seed, "subsets", name)
    out = []
    for _ in range(n_variants):
        size = int(gen.integers(1, len(fields) + 1))
        picked = np.sort(gen.choice(len(fields), size=size, replace=False))
        chosen = tuple(fields[i] for i in picked)
        cols = {fname: _random_column(gen, ftype, n_records) for fname, ftype in chosen}
        out.append((tuple(f for f, _ in chosen), EventStream(name, cols, np.arange(n_records, dtype=np.int64))))
    return out


# ------------------------------------------------------------------ catalog

QUERY_IDS = ("Q1", "Q2", "Q3", "Q4", "Q5", "Q6")
SECURESTREAM = "SecureStream"

# operator kinds per query, in stage order
CATALOG_KINDS = {
    "Q1": (MAP,),
    "Q2": (FILTER, MAP),
    "Q3": (FILTER, FILTER, JOIN, MAP),
    "Q4": (JOIN, MAX, AVERAGE),
    "Q5": (COUNT,),
    "Q6": (JOIN, FILTER, MAX, AVERAGE_PARTITION),
    SECURESTREAM: (MAP, FILTER, REDUCE),
}

# the streams each query reads
QUERY_STREAMS = {
    "Q1": ("bids",), "Q2": ("bids",), "Q3": ("persons", "auctions"), "Q4": ("auctions", "bids"),
    "Q5": ("bids",), "Q6": ("persons", "auctions"), SECURESTREAM: ("flights",),
}


class UnknownQuery(KeyError):
    pass


def _op(kind, expr=None, w=None, s=None, key=None, params=None, sid=None):
    if params and sid in params:
        p = params[sid]
        w = p.get("window_size", w)
        s = p.get("slide", s)
        expr = p.get("expr_id", expr)
    return OperatorSpec(kind, expr, w, s, key)


def catalog_query(query_id: str, params: dict | None = None, keyed_count: bool = False) -> PipelineSpec:
    """Operator DAG of a deployed query; ``params`` overrides per-stage settings."""
    P = params or {}

    def st(sid, *args, **kw):
        return StageSpec(sid, (_op(*args, params=P, sid=sid, **kw),))

    if query_id == "Q1":
        stages = (st("map", MAP, "q1"),)
        return PipelineSpec(stages, (), (Source("bids", "map"),), ("map",), "Q1")
    if query_id == "Q2":
        stages = (st("filter", FILTER, "mod:auction:3:0"), st("map", MAP, "project:auction,price"))
        return PipelineSpec(stages, (("filter", "map"),), (Source("bids", "filter"),), ("map",), "Q2")
    if query_id == "Q3":
        stages = (
            st("filter1", FILTER, "in:state:OR|ID|CA"),
            st("filter2", FILTER, "range:category:0:4"),
            st("join", JOIN, w=8, s=4, key="id:seller"),
            st("map", MAP, "project:name,city,state,id_r"),
        )
        edges = (("filter1", "join"), ("filter2", "join"), ("join", "map"))
        sources = (Source("persons", "filter1"), Source("auctions", "filter2"))
        return PipelineSpec(stages, edges, sources, ("map",), "Q3")
    if query_id == "Q4":
        stages = (
            st("join", JOIN, w=8, s=4, key="id:auction"),
            st("max", MAX, "price", w=16, s=4),
            st("average", AVERAGE, "price", w=32, s=8),
        )
        edges = (("join", "max"), ("max", "average"))
        sources = (Source("auctions", "join", 0), Source("bids", "join", 1))
        return PipelineSpec(stages, edges, sources, ("average",), "Q4")
    if query_id == "Q5":
        stages = (st("count", COUNT, w=16, s=4, key="auction" if keyed_count else None),)
        return PipelineSpec(stages, (), (Source("bids", "count"),), ("count",), "Q5")
    if query_id == "Q6":
        stages = (
            st("join", JOIN, w=8, s=4, key="id:seller"),
            st("filter", FILTER, "gt:initial_bid:100"),
            st("max", MAX, "initial_bid", w=16, s=4),
            st("avgpartition", AVERAGE_PARTITION, "initial_bid", w=8, s=2, key="seller"),
        )
        edges = (("join", "filter"), ("filter", "max"), ("max", "avgpartition"))
        sources = (Source("persons", "join", 0), Source("auctions", "join", 1))
        return PipelineSpec(stages, edges, sources, ("avgpartition",), "Q6")
    if query_id == SECURESTREAM:
        stages = (
            st("map", MAP, "project:carrier_id,delay"),
            st("filter", FILTER, "delayed"),
            st("reduce", REDUCE, "delay", w=32, s=8),
        )
        edges = (("map", "filter"), ("filter", "reduce"))
        return PipelineSpec(stages, edges, (Source("flights", "map"),), ("reduce",), SECURESTREAM)
    raise UnknownQuery(query_id)


def query_inputs(query_id: str, cfg: GeneratorConfig, limit: int | None = None) -> dict[str, list[EventRecord]]:
    """Materialised input streams for a query, each truncated to ``limit`` events."""
    if query_id == SECURESTREAM:
        streams = {"flights": gen_flights(cfg)}
    else:
        streams = gen_nexmark(cfg)
    return {name: list(streams[name].head(limit) if limit else streams[name]) for name in QUERY_STREAMS[query_id]}
