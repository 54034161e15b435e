import warnings

import numpy as np
import pytest

from streamleak.costmodel import CostModel
from streamleak.engine import OperatorSpec, RingBuffer, RunOptions, run_pipeline
from streamleak.engine.pipeline import ScriptedClock, TailProbe
from streamleak.observer import (
    SIMULATED,
    ObserverStarved,
    TimingTrace,
    heavy_mask,
    observe_schedule,
    observe_stage,
    profile_operator,
    read_traces,
    synth_trace,
    write_traces,
)

from .conftest import values_stream
from .test_pipeline import chain

FLAT = CostModel(jitter=0)


def test_scripted_schedule():
    assert observe_schedule([5, 9, 14]).tolist() == [4, 5]


def test_backwards_counter_rejected():
    with pytest.raises(ValueError):
        observe_schedule([5, 3])


def test_probe_timestamps_each_tail_change():
    buf = RingBuffer(8)
    probe = TailProbe(buf, ScriptedClock([5, 9, 14]))
    for i in range(3):
        buf.push(i)
    for _ in range(3):
        buf.pop()
        assert probe.poll()
    assert not probe.poll()
    assert observe_schedule(probe.times).tolist() == [4, 5]


def test_probe_counts_missed_transitions():
    buf = RingBuffer(8)
    probe = TailProbe(buf, ScriptedClock([1, 2]))
    for i in range(3):
        buf.push(i)
    buf.pop(), buf.pop(), buf.pop()
    probe.poll()
    assert probe.missed == 2 and len(probe.times) == 1


def test_zero_jitter_map_is_constant():
    t = synth_trace(OperatorSpec("Map", "q1"), FLAT, 500, seed=0)
    assert set(t.deltas.tolist()) == {1800}


def test_average_spikes_with_period_slide():
    t = synth_trace(OperatorSpec("Average", "v", 10, 5), FLAT, 100, seed=0)
    heavy = np.flatnonzero(t.deltas > 1760)
    assert heavy[0] == 9
    assert set(np.diff(heavy).tolist()) == {5}
    assert t.deltas[heavy[0]] == 1760 + 560 + 15 * 10


def test_heavy_mask_closed_form():
    assert np.flatnonzero(heavy_mask(20, 4, 3)).tolist() == [3, 6, 9, 12, 15, 18]
    assert heavy_mask(3, 4, 1).sum() == 0


def test_filter_has_two_levels():
    t = synth_trace(OperatorSpec("Filter", "gt:v:1"), FLAT, 1000, seed=2, selectivity=0.3)
    levels = sorted(set(t.deltas.tolist()))
    assert levels == [1740, 1830]
    assert abs(np.mean(t.deltas == 1830) - 0.3) < 0.05


def test_padded_trace_is_flat():
    t = synth_trace(OperatorSpec("Max", "v", 8, 2), FLAT, 200, seed=0, pad_target=5000)
    assert set(t.deltas.tolist()) == {5000}


def test_synth_rejects_short_windowed_trace():
    with pytest.raises(ValueError):
        synth_trace(OperatorSpec("Max", "v", 64, 2), FLAT, 10, seed=0)


def test_engine_trace_matches_synthesis_at_zero_jitter():
    """Both routes charge the same costs for the same window schedule."""
    spec = OperatorSpec("Max", "v", 8, 2)
    recs = values_stream(range(300))
    bare = CostModel(jitter=0, per_byte=0)
    engine = profile_operator(spec, recs, SIMULATED, 1, model=bare, engine=True)[0]
    synth = synth_trace(spec, bare, 300, seed=0)
    # delta j is the cost of record j; the last record has no later pop
    assert engine.deltas.tolist() == synth.deltas[:-1].tolist()


def test_observe_stage_labels_and_meta():
    handle = run_pipeline(chain(), {"s": values_stream(range(50))}, RunOptions(cost_model=FLAT, observe=("a",)))
    t = observe_stage(handle, "a", label="Map", meta={"query_id": "chain"})
    assert t.label == "Map" and t.query_id == "chain" and len(t) == 49
    assert observe_stage(handle, "a").label is None
    with pytest.raises(KeyError):
        observe_stage(handle, "b")


def test_starvation_warns_or_raises():
    handle = run_pipeline(chain(), {"s": values_stream(range(20))}, RunOptions(cost_model=FLAT, observe=("a",)))
    handle.probes["a"].missed = 3
    with pytest.warns(ObserverStarved):
        observe_stage(handle, "a")
    with pytest.raises(ObserverStarved):
        observe_stage(handle, "a", strict=True)


def test_profile_reps_and_grid():
    traces = profile_operator(OperatorSpec("Max", "v", 8, 2), reps=12, model=FLAT, n_events=300, seed=1,
                              w_grid=(8, 16), s_grid=(2, 4))
    assert len(traces) == 12
    assert {(t.window_size, t.slide) for t in traces} <= {(8, 2), (8, 4), (16, 2), (16, 4)}
    once = profile_operator(OperatorSpec("Map", "q1"), reps=1, model=FLAT, n_events=50)
    assert len(once) == 1 and len(once[0]) == 50
    with pytest.raises(ValueError):
        profile_operator(OperatorSpec("Map", "q1"), reps=0)


def test_profiling_is_seed_deterministic():
    a = profile_operator(OperatorSpec("Join", None, 8, 2, "k"), reps=3, model=CostModel(), n_events=400, seed=9,
                         w_grid=(8, 16), s_grid=(2, 4))
    b = profile_operator(OperatorSpec("Join", None, 8, 2, "k"), reps=3, model=CostModel(), n_events=400, seed=9,
                         w_grid=(8, 16), s_grid=(2, 4))
    assert [t.to_json() for t in a] == [t.to_json() for t in b]


def test_trace_validation():
    with pytest.raises(ValueError):
        TimingTrace("Map", {}, np.array([], dtype=np.int64))
    with pytest.raises(ValueError):
        TimingTrace("Map", {}, np.array([3, -1]))
    with pytest.raises(ValueError):
        TimingTrace("Map", {}, np.array([1.5]))
    t = TimingTrace("Map", {}, np.array([1, 2]))
    with pytest.raises(ValueError):
        t.deltas[0] = 7


def test_trace_file_round_trip(tmp_path):
    traces = [synth_trace(OperatorSpec("Average", "v", 8, 2), CostModel(), 100, seed=s,
                          meta={"query_id": "Q4", "stage_id": "average"}) for s in range(3)]
    path = tmp_path / "t.jsonl"
    assert write_traces(traces, path) == 3
    back = list(read_traces(path))
    assert [b.to_json() for b in back] == [t.to_json() for t in traces]
    assert back[0].window_size == 8 and back[0].query_id == "Q4"


def test_threaded_observation_sees_most_transitions():
    recs = values_stream(range(400))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ObserverStarved)
        handle = run_pipeline(chain(), {"s": recs}, RunOptions(mode="threaded", observe=("a",)))
        t = observe_stage(handle, "a")
    probe = handle.probes["a"]
    assert len(probe.times) + probe.missed == 400
    assert len(t) >= 1
