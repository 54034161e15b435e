"""Exit criteria, each run at its stated tolerance and time budget."""
import json
import threading
import time
import warnings
from collections import deque

import numpy as np
import pytest

from streamleak.attack import (
    NEXMARK_COUNTS,
    QUICK_RF_GRID,
    SIX_KINDS,
    S_GRID,
    W_GRID,
    apply_mitigation,
    evaluate_setting1,
    fit_regressors,
    operator_instances,
    padded_suite_accuracy,
    profile_suite,
    qrsr,
)
from streamleak.costmodel import CostModel
from streamleak.engine import (
    EMPTY,
    OperatorSpec,
    RingBuffer,
    RunOptions,
    apply_operator,
    init_state,
    run_pipeline,
    run_reference,
)
from streamleak.engine.records import DERIVED, EventRecord
from streamleak.features import build_dataset, cdf_features, split_even, trim_trace
from streamleak.generators import QUERY_IDS, SECURESTREAM, GeneratorConfig, catalog_query, query_inputs
from streamleak.models import ClassifierSpec, evaluate, evaluate_regressor, fit, regression_report
from streamleak.observer import MEASURED, ObserverStarved, profile_operator

from .acceptance_log import record
from .oracles import brute_aggregate, brute_join, brute_partitioned

pytestmark = pytest.mark.acceptance

SEED = 20240611


# ---------------------------------------------------------------- 1


def test_c1_qrsr_arithmetic():
    t0 = time.perf_counter()
    q2 = 100 * qrsr([0.8882, 1.0])
    q3 = 100 * qrsr([0.9946, 0.9933, 1.0, 0.9844])
    elapsed = time.perf_counter() - t0
    ok = abs(q2 - 88.82) <= 0.01 and abs(q3 - 97.26) <= 0.01 and elapsed < 1
    assert record(1, ok, f"Q2 {q2:.4f} (88.82), Q3 {q3:.4f} (97.26), {elapsed * 1e3:.2f} ms")


# ---------------------------------------------------------------- 2


def _run_op(spec, recs, ports=None):
    state = init_state(spec)
    out = []
    for i, rec in enumerate(recs):
        out.extend(apply_operator(state, spec, rec, 0 if ports is None else ports[i]))
    return out


def _check_stream(kind, gen):
    W = int(gen.integers(1, 65))
    S = int(gen.integers(1, W + 1))
    n = int(gen.integers(0, 4 * W + 40))
    values = gen.integers(-10_000, 10_000, n).tolist()
    if kind == "Join":
        ports = gen.integers(0, 2, n).tolist()
        keys = gen.integers(0, 4, n).tolist()
        recs = [EventRecord(i, DERIVED, (("k", keys[i]), ("i", i)), i) for i in range(n)]
        got = [(r.get("i"), r.get("i_r")) for r in _run_op(OperatorSpec("Join", None, W, S, "k"), recs, ports)]
        return got == brute_join(list(zip(ports, keys, range(n))), W, S)
    if kind == "AveragePartition":
        keys = gen.integers(0, 3, n).tolist()
        recs = [EventRecord(i, DERIVED, (("k", keys[i]), ("v", values[i])), i) for i in range(n)]
        got = [(r.get("k"), r.get("v")) for r in _run_op(OperatorSpec(kind, "v", W, S, "k"), recs)]
        want = brute_partitioned(values, keys, W, S)
        return [k for k, _ in got] == [k for k, _ in want] and np.allclose(
            [v for _, v in got], [v for _, v in want], rtol=0, atol=1e-9)
    recs = [EventRecord(i, DERIVED, (("v", values[i]),), i) for i in range(n)]
    spec = OperatorSpec(kind, None if kind == "Count" else "v", W, S)
    field = "count" if kind == "Count" else "v"
    got = [r.get(field) for r in _run_op(spec, recs)]
    want = brute_aggregate(kind, values, W, S)
    return len(got) == len(want) and np.allclose(got, want, rtol=0, atol=1e-9)


def test_c2_windowed_operators_match_brute_force():
    t0 = time.perf_counter()
    gen = np.random.default_rng(SEED)
    kinds = ("Max", "Average", "AveragePartition", "Count", "Reduce", "Join")
    mismatches = 0
    for i in range(1000):
        mismatches += not _check_stream(kinds[i % len(kinds)], gen)
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 120
    assert record(2, ok, f"{mismatches} mismatches over 1000 streams, {elapsed:.1f} s")


# ---------------------------------------------------------------- 3


def _threaded_spsc(n, capacity):
    buf = RingBuffer(capacity)
    got = []

    def consumer():
        while len(got) < n:
            item = buf.pop()
            if item is EMPTY:
                time.sleep(0)  # yield: one core is shared with the producer
            else:
                got.append(item)

    t = threading.Thread(target=consumer)
    t.start()
    i = 0
    while i < n:
        if buf.push(i):
            i += 1
        else:
            time.sleep(0)
    t.join()
    return got == list(range(n))


def test_c3_ring_buffer_laws():
    t0 = time.perf_counter()
    gen = np.random.default_rng(SEED)
    ops, violations = 0, 0
    while ops < 1_000_000:
        capacity = int(gen.integers(2, 65))
        push_bias = gen.uniform(0.2, 0.8)
        steps = gen.random(20_000) < push_bias
        buf, ref = RingBuffer(capacity), deque()
        for n, is_push in enumerate(steps.tolist()):
            if is_push:
                ok = buf.push(n)
                violations += ok != (len(ref) < capacity - 1)
                if ok:
                    ref.append(n)
            else:
                got = buf.pop()
                violations += (got is not EMPTY) if not ref else got != ref.popleft()
            violations += (buf.head == buf.tail) != (not ref)
            violations += ((buf.head + 1) % capacity == buf.tail) != (len(ref) == capacity - 1)
            violations += len(buf) != len(ref)
        ops += len(steps)
    # a large buffer lets each GIL handoff move a batch; the small one keeps hitting full/empty
    threaded_ok = _threaded_spsc(50_000, 1024) and _threaded_spsc(2_000, 16)
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and threaded_ok and elapsed < 60
    assert record(3, ok, f"{ops} ops, {violations} violations, threaded order {'ok' if threaded_ok else 'broken'}, "
                         f"{elapsed:.1f} s")


# ---------------------------------------------------------------- 4


def test_c4_featurizer_exactness():
    t0 = time.perf_counter()
    gen = np.random.default_rng(SEED)
    k, f = 1024, 0.05
    bad = 0
    for i in range(10_000):
        n = int(gen.integers(1, 3000)) if i % 3 else int(gen.integers(1, k))  # a third with n < k
        d = np.full(n, int(gen.integers(0, 10**6))) if i % 10 == 0 else gen.integers(0, 10**6, n)
        cut = int(np.floor(f * n))
        kept = trim_trace(d, f)
        bad += kept.tolist() != d.tolist()[cut:n - cut]
        s = sorted(kept.tolist())
        m = len(s)
        bad += cdf_features(kept, k).tolist() != [s[(j * (m - 1)) // (k - 1)] for j in range(k)]
    perm_bad = 0
    d = gen.integers(0, 10**6, 5000)
    base = cdf_features(d, k)
    for _ in range(1000):
        perm_bad += not np.array_equal(cdf_features(gen.permutation(d), k), base)
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and perm_bad == 0 and elapsed < 60
    assert record(4, ok, f"{bad} index mismatches on 10000 traces, {perm_bad} permutation failures, {elapsed:.1f} s")


# ------------------------------------------------------------ 5 to 8


def simulated_reports(seed):
    """Criteria 5, 6 and 7 as JSON reports plus their wall times."""
    instances = operator_instances()
    model = CostModel()
    times = {}

    t0 = time.perf_counter()
    ds = build_dataset(profile_suite(NEXMARK_COUNTS, instances, model, seed), 1024)
    res = evaluate_setting1(ds, grid=QUICK_RF_GRID, seed=seed, folds=3)
    six = np.isin(ds.labels, SIX_KINDS)
    _, test = split_even(ds, 0.5, seed)
    pred = res.model.predict(test.X)
    mask = np.isin(test.labels, SIX_KINDS)
    c5 = {**res.to_dict(), "six_kind_accuracy": float(np.mean(pred[mask] == test.labels[mask])),
          "rows": int(len(ds)), "six_kind_rows": int(six.sum())}
    times[5] = time.perf_counter() - t0

    t0 = time.perf_counter()
    windowed = ("Join", "Max", "Average", "AveragePartition", "Count")
    flat = model.with_jitter(0)
    wds = build_dataset(profile_suite({k: NEXMARK_COUNTS[k] for k in windowed}, instances, flat, seed), 1024)
    tr, te = split_even(wds, 0.5, seed)
    regs = fit_regressors(tr, seed=seed)
    c6 = {}
    for kind in windowed:
        sub = te.of_kind(kind)
        c6[kind] = {t: evaluate_regressor(regs[kind][t], sub).to_dict() for t in ("window_size", "slide")}
    y = {t: np.concatenate([te.of_kind(k).target(t) for k in windowed]) for t in ("window_size", "slide")}
    p = {t: np.concatenate([regs[k][t].predict(te.of_kind(k).X) for k in windowed]) for t in ("window_size", "slide")}
    c6 = {"per_kind": c6, "pooled": {t: regression_report(y[t], p[t]).to_dict() for t in y}}
    times[6] = time.perf_counter() - t0

    t0 = time.perf_counter()
    padded = padded_suite_accuracy(res.model, model, SIX_KINDS, 100, instances, seed)
    padded.pop("metrics")
    cfg = GeneratorConfig(seed=seed, persons=500, auctions=1500, bids=23000, flights=4000)
    preserved = {}
    for q in (*QUERY_IDS, SECURESTREAM):
        victim, inputs = catalog_query(q), query_inputs(q, cfg, 2000)
        ref = run_reference(victim, inputs)
        order = victim.topo_order()
        chain = order if q != "Q3" else ["join", "map"]
        variants = {"fuse": apply_mitigation(victim, "fuse", {"stages": chain}) if len(chain) > 1 else None,
                    "batch8": apply_mitigation(victim, "batch", {"batch_size": 8}),
                    "batch64": apply_mitigation(victim, "batch", {"batch_size": 64})}
        for name, spec in variants.items():
            if spec is None:
                continue
            sinks = list(run_pipeline(spec, inputs, RunOptions(cost_model=model, seed=seed)).outputs.values())
            preserved[f"{q}/{name}"] = sinks == list(ref.values())
    c7 = {"padded": padded, "outputs_preserved": preserved}
    times[7] = time.perf_counter() - t0

    reports = {n: json.dumps(r, sort_keys=True, indent=1) for n, r in ((5, c5), (6, c6), (7, c7))}
    return reports, times


@pytest.fixture(scope="module")
def first_run():
    return simulated_reports(SEED)


@pytest.mark.slow
def test_c5_end_to_end_attack(first_run):
    reports, times = first_run
    c5 = json.loads(reports[5])
    acc, six = c5["metrics"]["accuracy"], c5["six_kind_accuracy"]
    q = {k: round(v["qrsr"], 4) for k, v in c5["reports"].items()}
    ok = acc >= 0.85 and six >= 0.85 and min(q.values()) >= 0.70 and times[5] < 900
    assert record(5, ok, f"accuracy {acc:.4f} (six kinds {six:.4f}), QRSR {q}, {times[5]:.0f} s")


@pytest.mark.slow
def test_c6_parameter_regression(first_run):
    reports, times = first_run
    c6 = json.loads(reports[6])
    per_kind = {k: (round(v["window_size"]["r2"], 4), round(v["slide"]["r2"], 4)) for k, v in c6["per_kind"].items()}
    w, s = c6["pooled"]["window_size"]["r2"], c6["pooled"]["slide"]["r2"]
    worst = min(min(p) for p in per_kind.values())
    ok = worst >= 0.95 and w >= 0.95 and s >= 0.95 and times[6] < 600
    assert record(6, ok, f"pooled window R2 {w:.4f}, slide R2 {s:.4f}; per kind (window, slide) {per_kind}, "
                         f"{times[6]:.0f} s")


@pytest.mark.slow
def test_c7_mitigation_effectiveness(first_run):
    reports, times = first_run
    c7 = json.loads(reports[7])
    pad = c7["padded"]
    kept = c7["outputs_preserved"]
    ok = pad["accuracy"] <= 1 / 6 + 0.15 and pad["max_cv"] < 0.05 and all(kept.values()) and times[7] < 600
    assert record(7, ok, f"padded accuracy {pad['accuracy']:.4f} (limit {1 / 6 + 0.15:.4f}), max CV "
                         f"{pad['max_cv']:.4f}, budget {pad['budget']}, fuse/batch outputs preserved "
                         f"{sum(kept.values())}/{len(kept)}, {times[7]:.0f} s")


@pytest.mark.slow
def test_c8_determinism(first_run):
    again, _ = simulated_reports(SEED)
    same = {n: first_run[0][n].encode() == again[n].encode() for n in (5, 6, 7)}
    assert record(8, all(same.values()), f"byte-identical reports for criteria 5-7: {same}")


# ---------------------------------------------------------------- 9


@pytest.mark.slow
def test_c9_measured_smoke():
    """Machine-dependent and non-gating: a miss is reported as xfail."""
    t0 = time.perf_counter()
    recs = [EventRecord(i, DERIVED, (("v", float(i % 97)),), i) for i in range(1500)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ObserverStarved)
        traces = profile_operator(OperatorSpec("Map", "add:v:1"), recs, MEASURED, 100, seed=SEED, n_events=1500)
        traces += profile_operator(OperatorSpec("Average", "v", 32, 8), recs, MEASURED, 100, seed=SEED + 1,
                                   n_events=1500, w_grid=W_GRID, s_grid=S_GRID)
    ds = build_dataset(traces, 256)
    train, test = split_even(ds, 0.5, SEED)
    acc = evaluate(fit(ClassifierSpec("RandomForest", {"n_estimators": 100}, SEED), train), test).accuracy
    missed = sum(t.meta.get("missed", 0) for t in traces)
    ok = acc >= 0.9
    record(9, ok, f"Map vs Average on 200 wall-clock traces: accuracy {acc:.4f}, {missed} missed transitions, "
                  f"{time.perf_counter() - t0:.0f} s (non-gating)")
    if not ok:
        pytest.xfail(f"measured-mode accuracy {acc:.3f} below 0.9 on this machine")
