import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from streamleak.features import (
    AbsentClassWarning,
    ClassTooSmall,
    EmptyAfterTrim,
    LabeledDataset,
    MissingLabel,
    UnknownQuery,
    build_dataset,
    cdf_features,
    featurize,
    leave_one_query_out,
    minmax,
    quantile_index,
    split_even,
    trim_trace,
)
from streamleak.observer import TimingTrace

traces = arrays(np.int64, st.integers(1, 400), elements=st.integers(0, 10**6))


def trace(label, deltas, q=None, sid=None, w=None, s=None):
    params = {"window_size": w, "slide": s} if w else {}
    return TimingTrace(label, params, np.asarray(deltas), {"query_id": q, "stage_id": sid})


def test_trim_counts():
    assert len(trim_trace(np.arange(100), 0.05)) == 90
    assert len(trim_trace(np.arange(7), 0.05)) == 7
    assert trim_trace(np.arange(10), 0.2).tolist() == [2, 3, 4, 5, 6, 7]


def test_trim_keeps_trace_metadata():
    t = trace("Max", np.arange(40), q="Q4", w=8, s=2)
    out = trim_trace(t, 0.1)
    assert isinstance(out, TimingTrace) and len(out) == 32 and out.window_size == 8


def test_trim_errors():
    with pytest.raises(EmptyAfterTrim):
        trim_trace(np.array([], dtype=np.int64))
    with pytest.raises(ValueError):
        trim_trace(np.arange(5), 0.5)


def test_cdf_hand_oracle():
    assert cdf_features([4, 1, 3, 2], k=4).tolist() == [1, 2, 3, 4]
    assert cdf_features([5, 9], k=3).tolist() == [5, 5, 9]
    assert cdf_features([7] * 10, k=5).tolist() == [7] * 5


def test_quantile_index_end_points():
    idx = quantile_index(10_000, 1024)
    assert idx[0] == 0 and idx[-1] == 9999 and len(idx) == 1024


@settings(max_examples=300, deadline=None)
@given(d=traces, f=st.floats(0, 0.49))
def test_trim_closed_form(d, f):
    cut = math.floor(f * len(d))
    if len(d) - 2 * cut < 1:
        with pytest.raises(EmptyAfterTrim):
            trim_trace(d, f)
        return
    assert trim_trace(d, f).tolist() == d.tolist()[cut:len(d) - cut]


@settings(max_examples=300, deadline=None)
@given(d=traces, k=st.integers(2, 300))
def test_cdf_closed_form(d, k):
    ordered = sorted(d.tolist())
    n = len(ordered)
    want = [ordered[(j * (n - 1)) // (k - 1)] for j in range(k)]
    got = cdf_features(d, k)
    assert got.tolist() == want
    assert np.all(np.diff(got) >= 0)
    assert got[0] == ordered[0] and got[-1] == ordered[-1]


@settings(max_examples=100, deadline=None)
@given(d=traces, k=st.integers(2, 64), seed=st.integers(0, 2**32 - 1))
def test_cdf_is_permutation_invariant(d, k, seed):
    shuffled = np.random.default_rng(seed).permutation(d)
    assert np.array_equal(cdf_features(d, k), cdf_features(shuffled, k))


@settings(max_examples=100, deadline=None)
@given(d=arrays(np.int64, st.integers(1, 50), elements=st.integers(0, 1000)))
def test_short_trace_covers_every_value(d):
    # n <= k: every order statistic appears among the samples
    assert set(cdf_features(d, 64).tolist()) == set(d.tolist())


def test_minmax():
    assert minmax(np.array([2.0, 4.0, 3.0])).tolist() == [0.0, 1.0, 0.5]
    assert minmax(np.array([5.0, 5.0])).tolist() == [0.0, 0.0]


def small_dataset():
    ts = []
    for i in range(10):
        ts.append(trace("Map", np.full(30, 100 + i), q="Q1", sid="map"))
        ts.append(trace("Max", np.arange(30) + i, q="Q4", sid="max", w=8, s=2))
        ts.append(trace("Filter", np.arange(30) * 2 + i, q="Q2", sid="filter"))
    return build_dataset(ts, k=8, trim=0.0)


def test_build_dataset_columns():
    ds = small_dataset()
    assert ds.X.shape == (30, 8) and ds.k == 8
    assert ds.classes == ["Filter", "Map", "Max"]
    assert ds.of_kind("Max").window_size.tolist() == [8] * 10
    assert ds.of_kind("Map").window_size.tolist() == [-1] * 10
    assert ds.meta["featurizer"] == "cdf-quantile-v1"


def test_build_dataset_needs_labels():
    with pytest.raises(MissingLabel):
        build_dataset([trace(None, [1, 2, 3])], k=4)


def test_featurize_matches_labeled_rows():
    ts = [trace("Map", np.arange(50) * 3)]
    assert np.array_equal(featurize(ts, 16), build_dataset(ts, 16).X)


def test_csv_round_trip(tmp_path):
    ds = small_dataset()
    path = tmp_path / "ds.csv"
    ds.to_csv(path)
    back = LabeledDataset.from_csv(path)
    assert np.array_equal(back.X, ds.X)
    for name in ("labels", "window_size", "slide", "query_id", "stage_id"):
        assert getattr(back, name).tolist() == getattr(ds, name).tolist()
    assert back.meta["featurizer"] == ds.meta["featurizer"]


def test_split_even_is_stratified_and_seeded():
    ds = small_dataset()
    tr, te = split_even(ds, 0.5, seed=1)
    assert len(tr) == len(te) == 15
    for c in ds.classes:
        assert (tr.labels == c).sum() == 5
    tr2, _ = split_even(ds, 0.5, seed=1)
    assert np.array_equal(tr.X, tr2.X)
    with pytest.raises(ClassTooSmall):
        split_even(ds.subset([0, 1, 2, 3]), 0.5)


def test_leave_one_query_out():
    ds = small_dataset()
    with pytest.warns(AbsentClassWarning):
        train, test, absent = leave_one_query_out(ds, "Q4")
    assert absent == ["Max"] and len(test) == 10 and "Q4" not in train.query_id.tolist()
    with pytest.raises(UnknownQuery):
        leave_one_query_out(ds, "Q9")


def test_concat():
    ds = small_dataset()
    both = LabeledDataset.concat([ds.of_kind("Map"), ds.of_kind("Max")])
    assert len(both) == 20 and both.classes == ["Map", "Max"]
