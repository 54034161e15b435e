import numpy as np
import pytest

from streamleak.engine import make_record
from streamleak.engine.records import DERIVED, EventRecord


def values_stream(values, field="v", schema=DERIVED, key=None, keys=None):
    """Derived records carrying one numeric field (and optionally a key)."""
    out = []
    for i, v in enumerate(values):
        fields = [(field, v)]
        if keys is not None:
            fields.insert(0, (key, keys[i]))
        out.append(EventRecord(i, schema, tuple(fields), i))
    return out


def bids(n, seed=0, n_auctions=5):
    gen = np.random.default_rng(seed)
    return [
        make_record("Bid", i, {"auction": int(gen.integers(0, n_auctions)), "bidder": int(gen.integers(0, 50)),
                               "price": float(gen.integers(1, 1000)), "dt": i})
        for i in range(n)
    ]


@pytest.fixture
def small_bids():
    return bids(200)


def pytest_terminal_summary(terminalreporter):
    from . import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(acceptance_log.LINES):
            terminalreporter.write_line(acceptance_log.LINES[n])
