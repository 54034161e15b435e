"""Trace featurisation and labeled datasets.

A trace is trimmed at both ends, then summarised by ``k`` values read off
its empirical quantile function at evenly spaced ranks:
``values[j] = sorted[floor(j * (n - 1) / (k - 1))]``.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .observer import TimingTrace
from .rng import rng

FEATURIZER_ID = "cdf-quantile-v1"
DEFAULT_K = 1024
DEFAULT_TRIM = 0.05


class EmptyAfterTrim(ValueError):
    pass


class MissingLabel(ValueError):
    pass


class ClassTooSmall(ValueError):
    pass


class UnknownQuery(KeyError):
    pass


class AbsentClassWarning(UserWarning):
    pass


def _deltas(trace) -> np.ndarray:
    return np.asarray(trace.deltas if isinstance(trace, TimingTrace) else trace)


def trim_trace(trace, fraction: float = DEFAULT_TRIM):
    """Drop ``floor(fraction * n)`` deltas from each end.

    Accepts a TimingTrace (returns a TimingTrace) or a plain sequence.
    """
    if not 0 <= fraction < 0.5:
        raise ValueError("fraction must lie in [0, 0.5)")
    d = _deltas(trace)
    n = len(d)
    if n < 1:
        raise EmptyAfterTrim("empty trace")
    cut = int(np.floor(fraction * n))
    kept = d[cut:n - cut]
    if len(kept) == 0:
        raise EmptyAfterTrim(f"nothing left of {n} deltas after trimming {cut} per end")
    if isinstance(trace, TimingTrace):
        return TimingTrace(trace.label, trace.params, kept, dict(trace.meta))
    return kept


def quantile_index(n: int, k: int) -> np.ndarray:
    j = np.arange(k, dtype=np.int64)
    return (j * (n - 1)) // (k - 1)


def cdf_features(trace, k: int = DEFAULT_K) -> np.ndarray:
    if k < 2:
        raise ValueError("k must be >= 2")
    d = np.sort(_deltas(trace).astype(np.float64))
    if len(d) < 1:
        raise ValueError("empty trace")
    return d[quantile_index(len(d), k)]


def minmax(values: np.ndarray) -> np.ndarray:
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


@dataclass
class LabeledDataset:
    X: np.ndarray
    labels: np.ndarray  # object array of kind names
    window_size: np.ndarray  # -1 where not windowed
    slide: np.ndarray
    query_id: np.ndarray  # object array, None where unknown
    stage_id: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.labels)
        if self.stage_id is None:
            self.stage_id = np.array([None] * n, dtype=object)
        if self.X.shape[0] != n:
            raise ValueError("feature rows and labels differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @property
    def classes(self) -> list[str]:
        return sorted(set(self.labels.tolist()))

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(self.X[idx], self.labels[idx], self.window_size[idx], self.slide[idx],
                              self.query_id[idx], self.stage_id[idx], dict(self.meta))

    def where(self, mask) -> "LabeledDataset":
        return self.subset(np.flatnonzero(mask))

    def of_kind(self, kind: str) -> "LabeledDataset":
        return self.where(self.labels == kind)

    def target(self, name: str) -> np.ndarray:
        if name == "window_size":
            return self.window_size
        if name == "slide":
            return self.slide
        raise KeyError(name)

    @staticmethod
    def concat(parts: Sequence["LabeledDataset"]) -> "LabeledDataset":
        parts = [p for p in parts if len(p)]
        if not parts:
            raise ValueError("nothing to concatenate")
        return LabeledDataset(
            np.vstack([p.X for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.window_size for p in parts]),
            np.concatenate([p.slide for p in parts]),
            np.concatenate([p.query_id for p in parts]),
            np.concatenate([p.stage_id for p in parts]),
            dict(parts[0].meta),
        )

    # -- CSV with a JSON sidecar

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "query_id", "stage_id", "w", "s"] + [f"f{i}" for i in range(self.k)])
            for i in range(len(self)):
                ws = "" if self.window_size[i] < 0 else int(self.window_size[i])
                ss = "" if self.slide[i] < 0 else int(self.slide[i])
                w.writerow([self.labels[i], self.query_id[i] or "", self.stage_id[i] or "", ws, ss]
                           + [repr(float(v)) for v in self.X[i]])
        with open(str(path) + ".meta.json", "w") as fh:
            json.dump({"k": self.k, "rows": len(self), **self.meta}, fh, sort_keys=True, indent=1)

    @classmethod
    def from_csv(cls, path) -> "LabeledDataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        meta = {}
        try:
            with open(str(path) + ".meta.json") as fh:
                meta = json.load(fh)
        except FileNotFoundError:
            pass
        meta.pop("rows", None)
        meta.pop("k", None)
        body = rows[1:]
        k = len(rows[0]) - 5
        X = np.array([[float(v) for v in r[5:]] for r in body]).reshape(len(body), k)
        return cls(
            X,
            np.array([r[0] for r in body], dtype=object),
            np.array([int(r[3]) if r[3] else -1 for r in body], dtype=np.int64),
            np.array([int(r[4]) if r[4] else -1 for r in body], dtype=np.int64),
            np.array([r[1] or None for r in body], dtype=object),
            np.array([r[2] or None for r in body], dtype=object),
            meta=meta,
        )


def build_dataset(traces: Iterable[TimingTrace], k: int = DEFAULT_K, trim: float = DEFAULT_TRIM,
                  normalize: bool = False) -> LabeledDataset:
    rows, labels, ws, ss, qs, sids = [], [], [], [], [], []
    for t in traces:
        if t.label is None:
            raise MissingLabel(f"trace {t.meta.get('stage_id') or ''} has no label")
        v = cdf_features(trim_trace(t, trim), k)
        rows.append(minmax(v) if normalize else v)
        labels.append(t.label)
        ws.append(t.window_size if t.window_size is not None else -1)
        ss.append(t.slide if t.slide is not None else -1)
        qs.append(t.meta.get("query_id"))
        sids.append(t.meta.get("stage_id"))
    X = np.vstack(rows) if rows else np.zeros((0, k))
    meta = {"k": k, "trim": trim, "normalize": normalize, "featurizer": FEATURIZER_ID}
    return LabeledDataset(X, np.array(labels, dtype=object), np.array(ws, dtype=np.int64),
                          np.array(ss, dtype=np.int64), np.array(qs, dtype=object),
                          np.array(sids, dtype=object), meta)


def featurize(traces: Iterable[TimingTrace], k: int = DEFAULT_K, trim: float = DEFAULT_TRIM,
              normalize: bool = False) -> np.ndarray:
    """Feature matrix for unlabeled (online) traces."""
    rows = []
    for t in traces:
        v = cdf_features(trim_trace(t, trim), k)
        rows.append(minmax(v) if normalize else v)
    return np.vstack(rows) if rows else np.zeros((0, k))


# ------------------------------------------------------------------ splits


def stratified_assign(labels: np.ndarray, n_groups: int, gen: np.random.Generator) -> np.ndarray:
    """Group index per row so every class is spread over groups within +-1."""
    out = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for c in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == c)
        idx = idx[gen.permutation(len(idx))]
        out[idx] = (np.arange(len(idx)) + offset) % n_groups
        offset += len(idx)
    return out


def split_even(ds: LabeledDataset, ratio: float = 0.5, seed: int = 0):
    """Stratified split; each class contributes round(ratio * n_c) training rows."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    gen = rng(seed, "split_even")
    train_idx, test_idx = [], []
    for c in ds.classes:
        idx = np.flatnonzero(ds.labels == c)
        if len(idx) < 2:
            raise ClassTooSmall(f"class {c!r} has {len(idx)} row(s)")
        idx = idx[gen.permutation(len(idx))]
        n_train = min(max(int(np.floor(ratio * len(idx) + 0.5)), 1), len(idx) - 1)
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))
    return ds.subset(tr), ds.subset(te)


def leave_one_query_out(ds: LabeledDataset, query_id: str):
    """Hold out every row of ``query_id``; warns about classes train lacks.

    Returns (train, test, absent) where ``absent`` lists test classes with no
    training rows.
    """
    mask = ds.query_id == query_id
    if not mask.any():
        raise UnknownQuery(query_id)
    train, test = ds.where(~mask), ds.where(mask)
    absent = sorted(set(test.classes) - set(train.classes))
    if absent:
        warnings.warn(AbsentClassWarning(f"held-out {query_id} has classes absent from train: {absent}"),
                      stacklevel=2)
    return train, test, absent
