"""Operator specifications, expression registries and count-window semantics.

Windowed kinds keep at most ``window_size`` events. When a window holds
exactly ``window_size`` events one aggregate is emitted immediately, then
the oldest ``slide`` events are discarded. Value aggregates emit the record
that closed the window with the aggregated field replaced, so keys and other
context survive into downstream stages. Join keeps one such window per
input side and emits every key-equal pair once both sides are full.
"""
from __future__ import annotations

import operator as _op
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable

from .records import DERIVED, EventRecord

MAP = "Map"
FILTER = "Filter"
JOIN = "Join"
MAX = "Max"
AVERAGE = "Average"
AVERAGE_PARTITION = "AveragePartition"
COUNT = "Count"
REDUCE = "Reduce"

KINDS = (MAP, FILTER, JOIN, MAX, AVERAGE, AVERAGE_PARTITION, COUNT, REDUCE)
STATELESS = (MAP, FILTER)
WINDOWED = (JOIN, MAX, AVERAGE, AVERAGE_PARTITION, COUNT, REDUCE)

# per-record cost classes reported to the timing model
LIGHT = "light"
HEAVY = "heavy"
PASS = "pass"
DROP = "drop"
BASE = "base"


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class OperatorSpec:
    kind: str
    expr_id: str | None = None
    window_size: int | None = None
    slide: int | None = None
    key_field: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown operator kind {self.kind!r}")
        if self.kind in WINDOWED:
            w, s = self.window_size, self.slide
            if w is None or s is None or w < 1 or not 1 <= s <= w:
                raise SpecError(f"{self.kind} needs 1 <= slide <= window_size, got W={w} S={s}")
        elif self.window_size is not None or self.slide is not None:
            raise SpecError(f"{self.kind} takes no window parameters")
        if self.kind in (MAP, FILTER) and not self.expr_id:
            raise SpecError(f"{self.kind} needs an expr_id")
        if self.kind == AVERAGE_PARTITION and not self.key_field:
            raise SpecError("AveragePartition needs a key_field")

    @property
    def windowed(self) -> bool:
        return self.kind in WINDOWED

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "expr_id": self.expr_id,
            "window_size": self.window_size,
            "slide": self.slide,
            "key_field": self.key_field,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OperatorSpec":
        return cls(d["kind"], d.get("expr_id"), d.get("window_size"), d.get("slide"), d.get("key_field"))


# ---------------------------------------------------------------- registries


def _literal(text: str) -> Any:
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


MAP_ALIASES = {
    # dollars -> euros at the default rate
    "q1": "scale:price:0.9",
    "identity": "identity",
}

FILTER_ALIASES = {
    "delayed": "gt:delay:0",
}

_COMPARE = {"gt": _op.gt, "ge": _op.ge, "lt": _op.lt, "le": _op.le, "eq": _op.eq, "ne": _op.ne}


def parse_map(expr_id: str) -> Callable[[EventRecord], EventRecord]:
    """Map expressions: ``scale:f:c``, ``add:f:c``, ``project:f1,f2``, ``identity``."""
    expr = MAP_ALIASES.get(expr_id, expr_id)
    name, _, rest = expr.partition(":")
    if name == "identity":
        return lambda rec: rec
    if name in ("scale", "add"):
        fld, _, arg = rest.partition(":")
        k = float(arg)
        fn = _op.mul if name == "scale" else _op.add

        def apply(rec: EventRecord) -> EventRecord:
            value = rec.numeric(fld)
            out = fn(value, k)
            return rec.replace_fields((n, out if n == fld else v) for n, v in rec.fields)

        return apply
    if name == "project":
        keep = [f for f in rest.split(",") if f]
        if not keep:
            raise SpecError("project needs at least one field")

        def apply(rec: EventRecord) -> EventRecord:
            return rec.replace_fields(((n, rec.get(n)) for n in keep), DERIVED)

        return apply
    raise SpecError(f"unknown map expression {expr_id!r}")


def parse_filter(expr_id: str) -> Callable[[EventRecord], bool]:
    """Filter predicates: ``gt|ge|lt|le|eq|ne:f:v``, ``range:f:lo:hi``, ``mod:f:m:r``, ``in:f:a|b|c``."""
    expr = FILTER_ALIASES.get(expr_id, expr_id)
    parts = expr.split(":")
    name = parts[0]
    if name in _COMPARE and len(parts) == 3:
        fld, target, cmp = parts[1], _literal(parts[2]), _COMPARE[name]
        if isinstance(target, str):
            return lambda rec: cmp(rec.get(fld), target)
        return lambda rec: cmp(rec.numeric(fld), target)
    if name == "range" and len(parts) == 4:
        fld, lo, hi = parts[1], float(parts[2]), float(parts[3])
        return lambda rec: lo <= rec.numeric(fld) <= hi
    if name == "mod" and len(parts) == 4:
        fld, m, r = parts[1], int(parts[2]), int(parts[3])
        if m <= 0:
            raise SpecError("mod needs a positive modulus")
        return lambda rec: int(rec.numeric(fld)) % m == r
    if name == "in" and len(parts) == 3:
        fld = parts[1]
        allowed = {_literal(v) for v in parts[2].split("|")}
        return lambda rec: rec.get(fld) in allowed
    raise SpecError(f"unknown filter predicate {expr_id!r}")


def join_keys(key_field: str | None) -> tuple[str, str] | None:
    if not key_field:
        return None
    left, _, right = key_field.partition(":")
    return left, right or left


def merge_fields(left: EventRecord, right: EventRecord) -> tuple[tuple[str, Any], ...]:
    names = {n for n, _ in left.fields}
    out = list(left.fields)
    for n, v in right.fields:
        out.append((n + "_r" if n in names else n, v))
    return tuple(out)


# --------------------------------------------------------------------- state


@dataclass
class OperatorState:
    spec: OperatorSpec
    windows: dict = field(default_factory=dict)
    sides: tuple = field(default_factory=lambda: (deque(), deque()))
    out_seq: int = 0
    # (kind, cost class) for every operator invocation since last cleared
    events: list = field(default_factory=list)
    fn: Any = None

    def next_seq(self) -> int:
        seq = self.out_seq
        self.out_seq += 1
        return seq


def init_state(spec: OperatorSpec) -> OperatorState:
    state = OperatorState(spec)
    if spec.kind == MAP:
        state.fn = parse_map(spec.expr_id)
    elif spec.kind == FILTER:
        state.fn = parse_filter(spec.expr_id)
    return state


def _aggregate(kind: str, fld: str | None, window) -> tuple[str, Any]:
    if kind == COUNT:
        return "count", len(window)
    values = [rec.numeric(fld) for rec in window]
    if kind == MAX:
        return fld, max(values)
    return fld, sum(values) / len(values)


def _value_field(spec: OperatorSpec) -> str | None:
    if spec.kind == COUNT:
        return None
    if not spec.expr_id:
        raise SpecError(f"{spec.kind} needs expr_id naming the aggregated field")
    return spec.expr_id


def apply_operator(state: OperatorState, spec: OperatorSpec, rec: EventRecord, port: int = 0) -> list[EventRecord]:
    """Feed one record to the operator; returns the records it emits."""
    kind = spec.kind
    if kind == MAP:
        out = state.fn(rec)
        state.events.append((kind, BASE))
        return [EventRecord(state.next_seq(), out.schema_id, out.fields, rec.ts)]
    if kind == FILTER:
        keep = bool(state.fn(rec))
        state.events.append((kind, PASS if keep else DROP))
        return [EventRecord(state.next_seq(), rec.schema_id, rec.fields, rec.ts)] if keep else []
    if kind == JOIN:
        return _apply_join(state, spec, rec, port)

    W, S = spec.window_size, spec.slide
    fld = _value_field(spec)
    if fld is not None:
        rec.numeric(fld)  # validate before the record enters state
    keyed = kind == AVERAGE_PARTITION or (kind == COUNT and spec.key_field)
    key = rec.get(spec.key_field) if keyed else None
    window = state.windows.get(key)
    if window is None:
        window = state.windows[key] = deque()
    window.append(rec)
    if len(window) < W:
        state.events.append((kind, LIGHT))
        return []
    agg_kind = AVERAGE if kind in (REDUCE, AVERAGE_PARTITION) else kind
    name, value = _aggregate(agg_kind, fld, window)
    if kind == COUNT:
        fields = ((spec.key_field, key), (name, value)) if keyed else ((name, value),)
    else:
        # the aggregate replaces its field in the record that closed the window
        fields = tuple((n, value if n == name else v) for n, v in rec.fields)
    for _ in range(S):
        window.popleft()
    state.events.append((kind, HEAVY))
    return [EventRecord(state.next_seq(), DERIVED, fields, rec.ts)]


def _apply_join(state: OperatorState, spec: OperatorSpec, rec: EventRecord, port: int) -> list[EventRecord]:
    if port not in (0, 1):
        raise SpecError("Join ports are 0 (left) and 1 (right)")
    W, S = spec.window_size, spec.slide
    keys = join_keys(spec.key_field)
    if keys is not None:
        rec.get(keys[port])
    mine, other = state.sides[port], state.sides[1 - port]
    if len(mine) == W:
        # this side is full but the other is not: slide this side alone
        for _ in range(S):
            mine.popleft()
    mine.append(rec)
    if len(mine) < W or len(other) < W:
        state.events.append((JOIN, LIGHT))
        return []
    left, right = state.sides
    out = []
    for lrec in left:
        for rrec in right:
            if keys is None or lrec.get(keys[0]) == rrec.get(keys[1]):
                out.append(EventRecord(state.next_seq(), DERIVED, merge_fields(lrec, rrec), rec.ts))
    for side in state.sides:
        for _ in range(S):
            side.popleft()
    state.events.append((JOIN, HEAVY))
    return out
