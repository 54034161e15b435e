"""Pipelined execution of operator DAGs behind sealed shared buffers.

Each stage owns an in-buffer and an out-buffer (SPSC rings of ciphertexts).
A record flows through five steps: the feeder (untrusted source side) pushes
it into the in-buffer; the worker (enclave side) pops and decrypts it; the
operator chain runs; the worker seals the results into the out-buffer; the
drain (untrusted sink side) forwards them to downstream stages or to the
result store.

Two schedulers share the same step functions: a deterministic round-robin
loop on the calling thread, and a threaded mode with one feeder, one worker
and one drain thread per stage. In deterministic mode a stage may run on a
virtual cycle clock fed by a ``CostModel``; the clock only advances by
processing cost, i.e. every stage behaves as if executed in isolation with
its input already buffered.
"""
from __future__ import annotations

import heapq
import json
import os
import sys
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

from .crypto import DEFAULT_KEY_HEX, Sealer
from .operators import JOIN, OperatorSpec, apply_operator, init_state
from .records import EventRecord
from .ringbuffer import EMPTY, RingBuffer

FUSED = "Fused"
_EOS = object()


class PipelineError(Exception):
    pass


class InvalidPipeline(PipelineError):
    pass


class PipelineStall(PipelineError):
    pass


class StageError(PipelineError):
    def __init__(self, stage_id: str, cause: BaseException):
        super().__init__(f"stage {stage_id!r} failed: {cause!r}")
        self.stage_id = stage_id
        self.cause = cause


# ------------------------------------------------------------------- specs


@dataclass(frozen=True)
class StageSpec:
    id: str
    ops: tuple[OperatorSpec, ...]
    pad_target: int = 0
    batch_size: int = 1

    def __post_init__(self):
        if not self.ops:
            raise InvalidPipeline(f"stage {self.id!r} has no operator")
        if self.batch_size < 1:
            raise InvalidPipeline("batch_size must be >= 1")
        if self.pad_target < 0:
            raise InvalidPipeline("pad_target must be >= 0")
        if any(op.kind == JOIN for op in self.ops[1:]):
            raise InvalidPipeline("a Join can only lead a fused stage")

    @property
    def kind(self) -> str:
        return self.ops[0].kind if len(self.ops) == 1 else FUSED

    @property
    def op(self) -> OperatorSpec:
        return self.ops[0]

    @property
    def n_inputs(self) -> int:
        return 2 if self.ops[0].kind == JOIN else 1

    def to_dict(self) -> dict:
        if len(self.ops) == 1:
            d = {"id": self.id, **self.ops[0].to_dict()}
        else:
            d = {"id": self.id, "kind": FUSED, "ops": [op.to_dict() for op in self.ops]}
        if self.pad_target:
            d["pad_target"] = self.pad_target
        if self.batch_size != 1:
            d["batch_size"] = self.batch_size
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StageSpec":
        if d["kind"] == FUSED:
            ops = tuple(OperatorSpec.from_dict(o) for o in d["ops"])
        else:
            ops = (OperatorSpec.from_dict(d),)
        return cls(str(d["id"]), ops, int(d.get("pad_target", 0)), int(d.get("batch_size", 1)))


def stage(id: str, kind: str, expr_id=None, window_size=None, slide=None, key_field=None) -> StageSpec:
    return StageSpec(id, (OperatorSpec(kind, expr_id, window_size, slide, key_field),))


@dataclass(frozen=True)
class Source:
    stream: str
    stage: str
    port: int = 0


@dataclass(frozen=True)
class PipelineSpec:
    stages: tuple[StageSpec, ...]
    edges: tuple[tuple[str, str], ...] = ()
    sources: tuple[Source, ...] = ()
    sinks: tuple[str, ...] = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "sinks", tuple(self.sinks))
        self.validate()

    # -- structure

    @property
    def stage_ids(self) -> list[str]:
        return [s.id for s in self.stages]

    def stage(self, stage_id: str) -> StageSpec:
        for s in self.stages:
            if s.id == stage_id:
                return s
        raise KeyError(stage_id)

    def downstream(self, stage_id: str) -> list[str]:
        return [b for a, b in self.edges if a == stage_id]

    def upstream(self, stage_id: str) -> list[str]:
        return [a for a, b in self.edges if b == stage_id]

    def inputs(self, stage_id: str) -> list[tuple[str, str]]:
        """Inbound bindings ordered by port: ``("source", stream)`` or ``("stage", id)``."""
        ports: dict[int, tuple[str, str]] = {}
        for src in self.sources:
            if src.stage == stage_id:
                if src.port in ports:
                    raise InvalidPipeline(f"port {src.port} of {stage_id!r} bound twice")
                ports[src.port] = ("source", src.stream)
        free = (p for p in range(len(self.edges) + len(self.sources) + 1) if p not in ports)
        for a, b in self.edges:
            if b == stage_id:
                ports[next(free)] = ("stage", a)
        if sorted(ports) != list(range(len(ports))):
            raise InvalidPipeline(f"ports of {stage_id!r} are not contiguous: {sorted(ports)}")
        return [ports[p] for p in sorted(ports)]

    def topo_order(self) -> list[str]:
        indeg = {s.id: 0 for s in self.stages}
        for _, b in self.edges:
            indeg[b] += 1
        ready = [s.id for s in self.stages if indeg[s.id] == 0]
        order = []
        while ready:
            sid = ready.pop(0)
            order.append(sid)
            for b in self.downstream(sid):
                indeg[b] -= 1
                if indeg[b] == 0:
                    ready.append(b)
        if len(order) != len(self.stages):
            raise InvalidPipeline("pipeline graph has a cycle")
        return order

    def validate(self) -> None:
        ids = self.stage_ids
        if len(set(ids)) != len(ids):
            raise InvalidPipeline("duplicate stage ids")
        known = set(ids)
        for a, b in self.edges:
            if a not in known or b not in known:
                raise InvalidPipeline(f"edge {a}->{b} references an unknown stage")
        for src in self.sources:
            if src.stage not in known:
                raise InvalidPipeline(f"source {src.stream} bound to unknown stage {src.stage}")
        for sid in self.sinks:
            if sid not in known:
                raise InvalidPipeline(f"unknown sink {sid}")
        self.topo_order()
        for s in self.stages:
            n = len(self.inputs(s.id))
            if n == 0:
                raise InvalidPipeline(f"stage {s.id!r} has no input")
            if n != s.n_inputs:
                raise InvalidPipeline(f"stage {s.id!r} ({s.kind}) needs {s.n_inputs} inputs, has {n}")

    # -- transforms

    def replace_stage(self, stage_id: str, new: StageSpec) -> "PipelineSpec":
        stages = tuple(new if s.id == stage_id else s for s in self.stages)
        return replace(self, stages=stages)

    # -- serialisation

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "stages": [s.to_dict() for s in self.stages],
            "edges": [list(e) for e in self.edges],
            "sources": [{"stream": s.stream, "stage": s.stage, "port": s.port} for s in self.sources],
            "sinks": list(self.sinks),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineSpec":
        return cls(
            tuple(StageSpec.from_dict(s) for s in d["stages"]),
            tuple((str(a), str(b)) for a, b in d.get("edges", ())),
            tuple(Source(s["stream"], str(s["stage"]), int(s.get("port", 0))) for s in d.get("sources", ())),
            tuple(str(s) for s in d.get("sinks", ())),
            d.get("name", ""),
        )

    @classmethod
    def from_json(cls, text: str) -> "PipelineSpec":
        return cls.from_dict(json.loads(text))


# ------------------------------------------------------------------ clocks


class VirtualClock:
    """Deterministic cycle counter advanced explicitly by the simulator."""

    def __init__(self, start: int = 0):
        self.now = start

    def read(self) -> int:
        return self.now

    def advance(self, cycles: int) -> None:
        if cycles < 0:
            raise ValueError("virtual clock cannot run backwards")
        self.now += cycles


class WallClock:
    """Monotonic nanosecond clock scaled to cycles at a fixed rate."""

    def __init__(self, cycles_per_ns: float = 1.0):
        self.cycles_per_ns = cycles_per_ns

    def read(self) -> int:
        return int(time.perf_counter_ns() * self.cycles_per_ns)


class ScriptedClock:
    """Replays a fixed list of readings (for exercising the observer)."""

    def __init__(self, readings: Iterable[int]):
        self._readings = iter(readings)
        self._last = 0

    def read(self) -> int:
        self._last = next(self._readings, self._last)
        return self._last


class TailProbe:
    """Polls a buffer's tail pointer and timestamps every observed change."""

    def __init__(self, buffer: RingBuffer, counter):
        self.buffer = buffer
        self.counter = counter
        self.last_tail = buffer.tail
        self.times: list[int] = []
        self.missed = 0
        self.lock = threading.Lock()

    def poll(self) -> bool:
        tail = self.buffer.tail
        if tail == self.last_tail:
            return False
        now = self.counter.read()
        step = (tail - self.last_tail) % self.buffer.capacity
        self.missed += step - 1
        self.last_tail = tail
        self.times.append(now)
        return True


# ----------------------------------------------------------------- runtime


@dataclass
class RunOptions:
    mode: str = "deterministic"  # or "threaded"
    clock: str = "virtual"  # or "wall"
    capacity: int = 1024
    key: str = DEFAULT_KEY_HEX
    cost_model: object | None = None
    seed: int = 0
    observe: tuple[str, ...] = ()
    stall_timeout: float = 30.0
    cycles_per_ns: float = 1.0
    # GIL switch interval while a threaded run is observed
    switch_interval: float = 2e-6
    block: bool = True
    # observed threaded workers yield after each pop (one-core hosts)
    yield_on_pop: bool = True

    def __post_init__(self):
        if self.mode not in ("deterministic", "threaded"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.clock not in ("virtual", "wall"):
            raise ValueError(f"unknown clock {self.clock!r}")
        if self.mode == "threaded" and self.clock == "virtual":
            self.clock = "wall"


class _StageRuntime:
    def __init__(self, spec: StageSpec, index: int, opts: RunOptions, n_ports: int):
        if spec.batch_size > opts.capacity - 1:
            raise InvalidPipeline(f"batch_size {spec.batch_size} exceeds buffer room {opts.capacity - 1}")
        self.spec = spec
        self.id = spec.id
        self.inboxes = [deque() for _ in range(n_ports)]
        self.ended = [False] * n_ports
        self.in_buf = RingBuffer(opts.capacity)
        self.out_buf = RingBuffer(opts.capacity)
        self.states = [init_state(op) for op in spec.ops]
        self.window_sizes = {op.kind: op.window_size or 0 for op in spec.ops}
        self.worker_sealer = Sealer(opts.key, prefix=(index + 1).to_bytes(4, "big"))
        self.sink_sealer = Sealer(opts.key, prefix=b"\xff\xff\xff\xfe")
        self.pending: deque = deque()
        self.input_done = False
        self.worker_done = False
        self.drain_done = False
        self.downstream: list[tuple["_StageRuntime", int]] = []
        self.collect: list[EventRecord] | None = None
        self.consumed = 0
        self.cost_model = opts.cost_model
        self.rng = np.random.default_rng([opts.seed, index, 0x5EED])
        if opts.clock == "virtual":
            self.clock = VirtualClock()
        else:
            self.clock = WallClock(opts.cycles_per_ns)
        self.virtual = opts.clock == "virtual"
        self.probes: list[TailProbe] = []
        self.yield_on_pop = False

    # -- step 1: untrusted feeder, inbox -> in-buffer

    def _choose_port(self):
        for p, box in enumerate(self.inboxes):
            if box and box[0] is _EOS:
                box.popleft()
                self.ended[p] = True
        if len(self.inboxes) == 1:
            return 0 if self.inboxes[0] else None
        a, b = self.inboxes
        if a and b:
            return 0 if a[0].ts <= b[0].ts else 1
        if a and self.ended[1]:
            return 0
        if b and self.ended[0]:
            return 1
        return None

    def feed(self) -> bool:
        moved = False
        while not self.in_buf.is_full():
            port = self._choose_port()
            if port is None:
                break
            self.in_buf.push((port, self.inboxes[port].popleft()))
            moved = True
        if not self.input_done and all(self.ended) and not any(self.inboxes):
            self.input_done = True
            moved = True
        return moved

    # -- steps 2-4: enclave worker

    def _flush(self) -> bool:
        moved = False
        while self.pending and self.out_buf.push(self.pending[0]):
            self.pending.popleft()
            moved = True
        return moved

    def _process(self, port: int, ct) -> None:
        start = None if self.virtual else self.clock.read()
        rec = self.worker_sealer.decrypt(ct)
        batch = [(rec, port)]
        for spec, state in zip(self.spec.ops, self.states):
            nxt = []
            for r, p in batch:
                nxt.extend((o, 0) for o in apply_operator(state, spec, r, p))
            batch = nxt
        for r, _ in batch:
            self.pending.append(self.worker_sealer.encrypt(r))
        events = []
        for state in self.states:
            events.extend(state.events)
            state.events.clear()
        if self.virtual:
            if self.cost_model is not None:
                cost = self.cost_model.sample_events(events, self.window_sizes, len(ct.body), self.rng)
                cost = self.cost_model.pad(cost, self.spec.pad_target, self.rng)
                self.clock.advance(cost)
        elif self.spec.pad_target:
            deadline = start + self.spec.pad_target
            while self.clock.read() < deadline:
                pass

    def work(self) -> bool:
        if self.pending:
            return self._flush()
        avail = len(self.in_buf)
        want = self.spec.batch_size
        if avail == 0 or (avail < want and not self.input_done):
            if avail == 0 and self.input_done and not self.worker_done:
                self.worker_done = True
                return True
            return False
        items = [self.in_buf.pop() for _ in range(min(want, avail))]
        self.consumed += len(items)
        if self.virtual:
            for probe in self.probes:
                probe.poll()
        elif self.yield_on_pop:
            # give a concurrent observer the chance to see this transition
            os.sched_yield()
        try:
            for port, ct in items:
                self._process(port, ct)
        except Exception as exc:
            raise StageError(self.id, exc) from exc
        self._flush()
        return True

    # -- step 5: untrusted drain, out-buffer -> downstream / results

    def drain(self) -> bool:
        moved = False
        while True:
            ct = self.out_buf.pop()
            if ct is EMPTY:
                break
            moved = True
            for ds, port in self.downstream:
                ds.inboxes[port].append(ct)
            if self.collect is not None:
                self.collect.append(self.sink_sealer.decrypt(ct))
        if self.worker_done and not self.pending and self.out_buf.is_empty() and not self.drain_done:
            for ds, port in self.downstream:
                ds.inboxes[port].append(_EOS)
            self.drain_done = True
            moved = True
        return moved


class RunHandle:
    """Live view of a pipeline run: per-stage buffers, probes and outputs."""

    def __init__(self, spec: PipelineSpec, opts: RunOptions):
        self.spec = spec
        self.opts = opts
        self.outputs: dict[str, list[EventRecord]] = {sid: [] for sid in spec.sinks}
        self.stages: dict[str, _StageRuntime] = {}
        self.probes: dict[str, TailProbe] = {}
        self.order = spec.topo_order()
        self.error: BaseException | None = None
        self.done = threading.Event()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._progress = 0
        self._old_switch: float | None = None

    def in_buffer(self, stage_id: str) -> RingBuffer:
        return self.stages[stage_id].in_buf

    def out_buffer(self, stage_id: str) -> RingBuffer:
        return self.stages[stage_id].out_buf

    def consumed(self, stage_id: str) -> int:
        return self.stages[stage_id].consumed

    @property
    def finished(self) -> bool:
        return all(st.drain_done for st in self.stages.values())

    def output(self, stage_id: str | None = None) -> list[EventRecord]:
        if stage_id is None:
            if len(self.spec.sinks) != 1:
                raise ValueError("pipeline has several sinks; name one")
            stage_id = self.spec.sinks[0]
        return self.outputs[stage_id]

    # -- deterministic scheduler

    def _run_deterministic(self) -> None:
        stages = [self.stages[sid] for sid in self.order]
        while not self.finished:
            progress = False
            for st in stages:
                progress |= st.feed()
                progress |= st.work()
                progress |= st.drain()
            if not progress:
                raise PipelineStall("no stage made progress")
        self.done.set()

    # -- threaded scheduler

    def _loop(self, step, is_done) -> None:
        try:
            while not self._stop.is_set() and not is_done():
                if step():
                    self._progress += 1
                else:
                    os.sched_yield()
        except BaseException as exc:
            self.error = exc
            self._stop.set()

    def _observe_loop(self) -> None:
        probes = list(self.probes.values())
        while not self._stop.is_set() and not self.finished:
            seen = False
            for probe in probes:
                seen |= probe.poll()
            if not seen:
                os.sched_yield()

    def _start_threads(self) -> None:
        if self.probes:
            self._old_switch = sys.getswitchinterval()
            sys.setswitchinterval(self.opts.switch_interval)
        for st in self.stages.values():
            for step, attr in ((st.feed, "input_done"), (st.work, "worker_done"), (st.drain, "drain_done")):
                t = threading.Thread(
                    target=self._loop, args=(step, (lambda s=st, a=attr: getattr(s, a))), daemon=True,
                    name=f"{st.id}-{attr}",
                )
                self._threads.append(t)
        if self.probes:
            # the observer starts first so it sees the very first transitions
            self._threads.insert(0, threading.Thread(target=self._observe_loop, daemon=True, name="observer"))
        for t in self._threads:
            t.start()

    def wait(self, timeout: float | None = None) -> "RunHandle":
        if self.opts.mode == "deterministic":
            if self.error:
                raise self.error
            return self
        deadline = None if timeout is None else time.monotonic() + timeout
        last, last_change = self._progress, time.monotonic()
        try:
            while not self.finished:
                if self.error is not None:
                    raise self.error
                if deadline is not None and time.monotonic() > deadline:
                    raise TimeoutError("pipeline still running")
                time.sleep(0.002)
                if self._progress != last:
                    last, last_change = self._progress, time.monotonic()
                elif time.monotonic() - last_change > self.opts.stall_timeout:
                    raise PipelineStall(f"no progress for {self.opts.stall_timeout}s")
        finally:
            self._stop.set()
            for t in self._threads:
                t.join(timeout=1.0)
            if self._old_switch is not None:
                sys.setswitchinterval(self._old_switch)
                self._old_switch = None
        # final poll catches a transition that raced with shutdown
        for probe in self.probes.values():
            probe.poll()
        if self.error is not None:
            raise self.error
        self.done.set()
        return self


def run_pipeline(spec: PipelineSpec, inputs: Mapping[str, Iterable[EventRecord]],
                 opts: RunOptions | None = None) -> RunHandle:
    """Execute ``spec`` over named input streams and return the run handle."""
    opts = opts or RunOptions()
    handle = RunHandle(spec, opts)
    for i, sid in enumerate(spec.stage_ids):
        sspec = spec.stage(sid)
        handle.stages[sid] = _StageRuntime(sspec, i, opts, len(spec.inputs(sid)))
    for sid in spec.stage_ids:
        st = handle.stages[sid]
        for port, (kind, name) in enumerate(spec.inputs(sid)):
            if kind == "stage":
                handle.stages[name].downstream.append((st, port))
        if sid in handle.outputs:
            st.collect = handle.outputs[sid]
    for sid in opts.observe:
        st = handle.stages[sid]
        probe = TailProbe(st.in_buf, st.clock)
        st.yield_on_pop = opts.mode == "threaded" and opts.yield_on_pop
        st.probes.append(probe)
        handle.probes[sid] = probe
    missing = {s.stream for s in spec.sources} - set(inputs)
    if missing:
        raise InvalidPipeline(f"no input given for streams {sorted(missing)}")
    source_sealer = Sealer(opts.key, prefix=b"\xff\xff\xff\xff")
    for src in spec.sources:
        box = handle.stages[src.stage].inboxes[src.port]
        box.extend(source_sealer.encrypt(rec) for rec in inputs[src.stream])
        box.append(_EOS)
    if opts.mode == "deterministic":
        try:
            handle._run_deterministic()
        except BaseException as exc:
            handle.error = exc
            raise
    else:
        handle._start_threads()
        if opts.block:
            handle.wait()
    return handle


# --------------------------------------------------------------- reference


def run_reference(spec: PipelineSpec, inputs: Mapping[str, Iterable[EventRecord]],
                  all_stages: bool = False) -> dict[str, list[EventRecord]]:
    """Sequential execution without buffers or sealing; the equivalence oracle.

    Returns the sink outputs, or every stage's output with ``all_stages``.

    Two-input stages consume their inputs merged by (timestamp, port), the
    same rule the pipeline's untrusted merger applies.
    """
    produced: dict[str, list[EventRecord]] = {}
    streams = {name: list(recs) for name, recs in inputs.items()}
    for sid in spec.topo_order():
        sspec = spec.stage(sid)
        ins = [streams[name] if kind == "source" else produced[name] for kind, name in spec.inputs(sid)]
        tagged = [[(r.ts, p, i, r) for i, r in enumerate(recs)] for p, recs in enumerate(ins)]
        merged = heapq.merge(*tagged) if len(tagged) > 1 else tagged[0]
        states = [init_state(op) for op in sspec.ops]
        out = []
        for _, port, _, rec in merged:
            batch = [(rec, port)]
            for op, state in zip(sspec.ops, states):
                batch = [(o, 0) for r, p in batch for o in apply_operator(state, op, r, p)]
            out.extend(r for r, _ in batch)
        produced[sid] = out
    if all_stages:
        return produced
    return {sid: produced[sid] for sid in spec.sinks}
