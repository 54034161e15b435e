"""Timing traces: tail-pointer observation and a synthetic cost oracle.

A trace is the sequence of per-record processing durations of one stage,
recovered by timestamping every advance of the stage's in-buffer tail.
``synth_trace`` draws the same kind of sequence straight from a CostModel
without running the engine, which is how large offline datasets are built.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Iterator

import numpy as np

from .costmodel import BASE, DROP, HEAVY, CostModel
from .engine.operators import FILTER, WINDOWED, OperatorSpec
from .engine.pipeline import (
    PipelineSpec,
    RunHandle,
    RunOptions,
    ScriptedClock,
    Source,
    StageSpec,
    TailProbe,
    VirtualClock,
    WallClock,
    run_pipeline,
)
from .engine.records import encode
from .rng import rng as make_rng

__all__ = [
    "TimingTrace", "ObserverStarved", "CycleCounter", "VirtualClock", "WallClock", "ScriptedClock",
    "observe_stage", "observe_schedule", "synth_trace", "heavy_mask", "profile_operator",
    "read_traces", "write_traces", "MEASURED", "SIMULATED",
]

MEASURED = "measured"
SIMULATED = "simulated"

# any object with a monotone ``read() -> int`` works as a counter
CycleCounter = VirtualClock | WallClock | ScriptedClock


class ObserverStarved(RuntimeWarning):
    """The observer missed tail transitions; the trace it returns is short."""

    def __init__(self, stage_id: str, missed: int):
        super().__init__(f"observer of {stage_id!r} missed {missed} transitions")
        self.stage_id = stage_id
        self.missed = missed


@dataclass(frozen=True)
class TimingTrace:
    label: str | None
    params: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))
    deltas: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = np.asarray(self.deltas)
        if d.ndim != 1 or len(d) < 1:
            raise ValueError("a trace needs at least one delta")
        if not np.issubdtype(d.dtype, np.integer):
            if not np.all(np.equal(np.mod(d, 1), 0)):
                raise ValueError("deltas must be integers")
        d = d.astype(np.int64)
        if d.min() < 0:
            raise ValueError("deltas must be non-negative")
        d.setflags(write=False)
        object.__setattr__(self, "deltas", d)
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))

    def __len__(self) -> int:
        return len(self.deltas)

    @property
    def window_size(self):
        return self.params.get("window_size")

    @property
    def slide(self):
        return self.params.get("slide")

    @property
    def query_id(self):
        return self.meta.get("query_id")

    def unlabeled(self) -> "TimingTrace":
        return TimingTrace(None, {}, self.deltas, dict(self.meta))

    def to_json(self) -> str:
        body = {
            "label": self.label,
            "params": {"w": self.window_size, "s": self.slide},
            "mode": self.meta.get("mode"),
            "seed": self.meta.get("seed"),
            "query_id": self.meta.get("query_id"),
            "stage_id": self.meta.get("stage_id"),
            "deltas": self.deltas.tolist(),
        }
        return json.dumps(body, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "TimingTrace":
        d = json.loads(line)
        p = d.get("params") or {}
        params = {}
        if p.get("w") is not None:
            params = {"window_size": p["w"], "slide": p["s"]}
        meta = {k: d.get(k) for k in ("mode", "seed", "query_id", "stage_id") if d.get(k) is not None}
        return cls(d.get("label"), params, np.asarray(d["deltas"], dtype=np.int64), meta)


def write_traces(traces: Iterable[TimingTrace], path) -> int:
    n = 0
    with open(path, "w") as fh:
        for t in traces:
            fh.write(t.to_json())
            fh.write("\n")
            n += 1
    return n


def read_traces(path) -> Iterator[TimingTrace]:
    with open(path) as fh:
        for line in fh:
            if line.strip():
                yield TimingTrace.from_json(line)


def _spec_params(spec: OperatorSpec) -> dict:
    if spec.kind in WINDOWED:
        return {"window_size": spec.window_size, "slide": spec.slide}
    return {}


# ------------------------------------------------------------- observation


def observe_schedule(times: Iterable[int], counter=None) -> np.ndarray:
    """First differences of tail-change timestamps, rejecting a backwards clock."""
    t = np.asarray(list(times), dtype=np.int64)
    d = np.diff(t)
    if len(d) and d.min() < 0:
        raise ValueError("counter went backwards")
    return d


def observe_stage(handle: RunHandle, stage_id: str, label: str | None = None,
                  params: dict | None = None, meta: dict | None = None, strict: bool = False) -> TimingTrace:
    """Trace of one observed stage of a run.

    The run must have been started with ``stage_id`` in ``RunOptions.observe``.
    Pass ``label`` (offline profiling) to attach the ground truth. Misses are
    reported as an ``ObserverStarved`` warning, or raised with ``strict``.
    """
    if stage_id not in handle.probes:
        raise KeyError(f"stage {stage_id!r} was not observed")
    probe: TailProbe = handle.probes[stage_id]
    with probe.lock:
        times = list(probe.times)
        missed = probe.missed
    if missed:
        if strict:
            raise ObserverStarved(stage_id, missed)
        warnings.warn(ObserverStarved(stage_id, missed), stacklevel=2)
    deltas = observe_schedule(times)
    info = {"stage_id": stage_id, "missed": missed,
            "mode": MEASURED if handle.opts.clock == "wall" else SIMULATED}
    info.update(meta or {})
    if label is None:
        params = {}
    return TimingTrace(label, params or {}, deltas, info)


# --------------------------------------------------------------- synthesis


def heavy_mask(n: int, window_size: int, slide: int) -> np.ndarray:
    """Events that complete a window: the W-th event and every S-th after it."""
    i = np.arange(n)
    warm = i - (window_size - 1)
    return (warm >= 0) & (warm % slide == 0)


def synth_trace(spec: OperatorSpec, model: CostModel, n: int, seed: int, payload_bytes=0,
                selectivity: float | None = None, meta: dict | None = None,
                pad_target: int = 0) -> TimingTrace:
    """Draw ``n`` per-record costs for ``spec`` from ``model``.

    ``payload_bytes`` is a scalar or a pool of record sizes sampled with
    replacement. Filter records are dropped with probability
    ``1 - selectivity`` (the model's default when not given). A positive
    ``pad_target`` applies the padding mitigation to every record.
    """
    if spec.kind in WINDOWED and n < spec.window_size:
        raise ValueError(f"need n >= W ({spec.window_size}), got {n}")
    if n < 1:
        raise ValueError("n must be positive")
    gen = make_rng(seed, "synth", spec.kind)
    classes = np.full(n, BASE, dtype=np.int8)
    if spec.kind == FILTER:
        sel = model.selectivity if selectivity is None else selectivity
        classes[gen.random(n) >= sel] = DROP
    elif spec.kind in WINDOWED:
        classes[heavy_mask(n, spec.window_size, spec.slide)] = HEAVY
    pool = np.atleast_1d(np.asarray(payload_bytes, dtype=np.float64))
    payload = pool if len(pool) == 1 else pool[gen.integers(0, len(pool), n)]
    deltas = model.sample(spec.kind, classes, spec.window_size, payload, gen)
    if pad_target > 0:
        deltas = model.pad(deltas, pad_target, gen)
    info = {"mode": SIMULATED, "seed": seed}
    info.update(meta or {})
    return TimingTrace(spec.kind, _spec_params(spec), deltas, info)


# --------------------------------------------------------------- profiling


def _pick_params(gen, w_grid, s_grid):
    ws = list(w_grid)
    w = int(ws[gen.integers(0, len(ws))])
    ss = [s for s in s_grid if s <= w] or [w]
    s = int(ss[gen.integers(0, len(ss))])
    return w, s


def _payload_pool(data):
    if data is None:
        return 0
    if isinstance(data, (int, float, np.ndarray)):
        return data
    if hasattr(data, "schema") or (len(data) == 2 and isinstance(data[0], (list, tuple))):
        data = [r for part in ([data] if hasattr(data, "schema") else data) for r in part]
    sizes = [len(encode(r)) for r in data]
    return np.asarray(sizes, dtype=np.float64) if sizes else 0


def _single_stage(spec: OperatorSpec, n_inputs: int) -> PipelineSpec:
    st = StageSpec("op", (spec,))
    sources = tuple(Source(f"in{p}", "op", p) for p in range(n_inputs))
    return PipelineSpec((st,), (), sources, ("op",), spec.kind)


def profile_operator(spec: OperatorSpec, data=None, mode: str = SIMULATED, reps: int = 1, *,
                     model: CostModel | None = None, n_events: int = 10_000, seed: int = 0,
                     w_grid=None, s_grid=None, selectivity_range=(0.05, 0.95),
                     payloads=None, engine: bool = False, meta: dict | None = None, pad_target: int = 0,
                     opts: RunOptions | None = None) -> list[TimingTrace]:
    """Labeled traces of one operator kind across ``reps`` runs.

    Windowed kinds draw (W, S) per run from ``w_grid`` x ``s_grid`` when the
    grids are given, otherwise use the operator's own window parameters. In simulated
    mode without ``engine`` the traces are synthesised from ``model``;
    otherwise a single-stage pipeline is run over ``data`` (a list of
    records, or a pair of lists for Join) and its stage is observed.
    Synthesised runs take record sizes from one of ``payloads`` (a list of
    size pools, one picked per run) or else from ``data``.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if mode not in (SIMULATED, MEASURED):
        raise ValueError(f"unknown mode {mode!r}")
    model = model or CostModel()
    gen = make_rng(seed, "profile", spec.kind)
    traces = []
    for r in range(reps):
        op = spec
        if spec.kind in WINDOWED and w_grid is not None:
            w, s = _pick_params(gen, w_grid, s_grid or [spec.slide])
            op = OperatorSpec(spec.kind, spec.expr_id, w, s, spec.key_field)
        rep_seed = int(gen.integers(0, 2**62))
        info = {"rep": r, **(meta or {})}
        if mode == SIMULATED and not engine:
            sel = None
            if spec.kind == FILTER:
                lo, hi = selectivity_range
                sel = float(gen.uniform(lo, hi))
                info["selectivity"] = round(sel, 6)
            if payloads is not None:
                pool = payloads[int(gen.integers(0, len(payloads)))]
            else:
                pool = _payload_pool(data)
            traces.append(synth_trace(op, model, n_events, rep_seed, pool, sel, info, pad_target))
            continue
        if data is None:
            raise ValueError("engine profiling needs input data")
        ports = data if spec.kind == "Join" else (data,)
        inputs = {f"in{p}": list(recs)[:n_events] for p, recs in enumerate(ports)}
        base = opts or RunOptions()
        run_opts = RunOptions(
            mode="deterministic" if mode == SIMULATED else "threaded",
            clock="virtual" if mode == SIMULATED else "wall",
            capacity=base.capacity, key=base.key, cost_model=model if mode == SIMULATED else None,
            seed=rep_seed, observe=("op",), cycles_per_ns=base.cycles_per_ns,
            switch_interval=base.switch_interval, stall_timeout=base.stall_timeout,
        )
        handle = run_pipeline(_single_stage(op, len(ports)), inputs, run_opts)
        info["seed"] = rep_seed
        traces.append(observe_stage(handle, "op", spec.kind, _spec_params(op), info))
    return traces
