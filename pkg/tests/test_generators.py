import io
import json

import numpy as np
import pytest

from streamleak.engine.records import SCHEMAS, from_json_line, validate
from streamleak.generators import (
    CATALOG_KINDS,
    QUERY_IDS,
    SECURESTREAM,
    GeneratorConfig,
    UnknownQuery,
    catalog_query,
    gen_flights,
    gen_nexmark,
    query_inputs,
    synth_schema_subsets,
)
from streamleak.rng import child_seed, rng

CFG = GeneratorConfig(seed=11, persons=500, auctions=1500, bids=23000, flights=4000)


@pytest.fixture(scope="module")
def nexmark():
    return gen_nexmark(CFG)


def test_counts(nexmark):
    assert [len(nexmark[k]) for k in ("persons", "auctions", "bids")] == [500, 1500, 23000]


def test_timestamps_partition_the_event_index(nexmark):
    ts = np.concatenate([nexmark[k].ts for k in ("persons", "auctions", "bids")])
    assert sorted(ts.tolist()) == list(range(25000))
    for s in nexmark.values():
        assert np.all(np.diff(s.ts) > 0)


def test_referential_integrity(nexmark):
    p, a, b = nexmark["persons"], nexmark["auctions"], nexmark["bids"]
    sellers = a.columns["seller"]
    assert sellers.min() >= 0 and sellers.max() < len(p)
    assert b.columns["auction"].max() < len(a)
    assert b.columns["bidder"].max() < len(p)
    # references point at entities that already exist when possible
    opened = np.searchsorted(a.ts, b.ts)
    has_prior = opened > 0
    assert np.all(b.columns["auction"][has_prior] < opened[has_prior])


def test_records_match_schemas(nexmark):
    for s in nexmark.values():
        for rec in s.head(50):
            validate(rec)


def test_same_seed_same_streams():
    a, b = gen_nexmark(CFG), gen_nexmark(CFG)
    for k in a:
        assert list(a[k].head(100)) == list(b[k].head(100))
    other = gen_nexmark(GeneratorConfig(seed=12, persons=500, auctions=1500, bids=23000))
    assert list(other["bids"].head(100)) != list(a["bids"].head(100))


def test_flight_delay_fractions():
    f = gen_flights(CFG, 20000)
    delay = f.columns["delay"]
    assert abs(np.mean(delay > 0) - CFG.fraction_delayed) < 0.02
    assert abs(np.mean(delay == 0) - CFG.fraction_on_time) < 0.02


def test_write_jsonl_round_trip(nexmark):
    fh = io.StringIO()
    nexmark["auctions"].head(5).write_jsonl(fh)
    lines = fh.getvalue().splitlines()
    assert [from_json_line(l) for l in lines] == list(nexmark["auctions"].head(5))


def test_schema_subsets_are_typed_and_non_empty():
    out = synth_schema_subsets("Auction", seed=4, n_variants=20, n_records=10)
    types = dict(SCHEMAS["Auction"])
    for names, stream in out:
        assert names and set(names) <= set(types)
        assert len(stream) == 10
        for rec in stream:
            for n, v in rec.fields:
                assert isinstance(v, types[n])


@pytest.mark.parametrize("bad", [dict(rate_profile="weird"), dict(fraction_delayed=0.9, fraction_on_time=0.2),
                                 dict(prng="mt19937"), dict(bids=-1), dict(persons=0), dict(categories=0),
                                 dict(hot_ratio=1.5), dict(price_range=(5.0, 5.0))])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        GeneratorConfig(**bad)


def test_config_json_round_trip():
    cfg = GeneratorConfig(seed=3, price_range=(2.0, 50.0))
    assert GeneratorConfig.from_dict(json.loads(cfg.to_json())) == cfg


@pytest.mark.parametrize("q", [*QUERY_IDS, SECURESTREAM])
def test_catalog_kinds_and_inputs(q):
    spec = catalog_query(q)
    assert tuple(spec.stage(s).kind for s in spec.stage_ids) == CATALOG_KINDS[q]
    inputs = query_inputs(q, CFG, 100)
    assert {s.stream for s in spec.sources} == set(inputs)
    assert all(len(v) == 100 for v in inputs.values())


def test_catalog_params_override():
    spec = catalog_query("Q4", {"max": {"window_size": 32, "slide": 8}})
    assert (spec.stage("max").op.window_size, spec.stage("max").op.slide) == (32, 8)


def test_unknown_query():
    with pytest.raises(UnknownQuery):
        catalog_query("Q9")


def test_named_substreams_are_independent_of_call_order():
    a = rng(5, "x").integers(0, 1000, 5)
    rng(5, "y").integers(0, 1000, 5)
    assert np.array_equal(a, rng(5, "x").integers(0, 1000, 5))
    assert child_seed(5, "x") == child_seed(5, "x") != child_seed(5, "y")
