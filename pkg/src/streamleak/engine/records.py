"""Typed stream events and their wire encoding."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Iterable

PERSON = "Person"
AUCTION = "Auction"
BID = "Bid"
FLIGHT = "Flight"
DERIVED = "Derived"

SCHEMA_IDS = (PERSON, AUCTION, BID, FLIGHT, DERIVED)

# field name -> python type; Derived records carry whatever the operator emits
SCHEMAS: dict[str, tuple[tuple[str, type], ...]] = {
    PERSON: (("id", int), ("name", str), ("email", str), ("state", str), ("city", str)),
    AUCTION: (
        ("id", int),
        ("item", str),
        ("category", int),
        ("seller", int),
        ("initial_bid", float),
        ("expires", int),
    ),
    BID: (("auction", int), ("bidder", int), ("price", float), ("dt", int)),
    FLIGHT: (("carrier_id", str), ("origin", str), ("dest", str), ("distance", float), ("delay", float)),
}


class RecordError(ValueError):
    pass


class MissingField(RecordError):
    pass


class TypeMismatch(RecordError):
    pass


class MalformedPayload(RecordError):
    pass


@dataclass(frozen=True)
class EventRecord:
    seq: int
    schema_id: str
    fields: tuple[tuple[str, Any], ...]
    ts: int = 0

    def __post_init__(self):
        if self.schema_id not in SCHEMA_IDS:
            raise RecordError(f"unknown schema {self.schema_id!r}")
        if self.ts < 0:
            raise RecordError("ts must be non-negative")

    def get(self, name: str) -> Any:
        for key, value in self.fields:
            if key == name:
                return value
        raise MissingField(f"{self.schema_id} record has no field {name!r}")

    def has(self, name: str) -> bool:
        return any(key == name for key, _ in self.fields)

    def numeric(self, name: str) -> float:
        value = self.get(name)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeMismatch(f"field {name!r} is not numeric: {value!r}")
        return value

    def as_dict(self) -> dict[str, Any]:
        return dict(self.fields)

    def replace_fields(self, fields: Iterable[tuple[str, Any]], schema_id: str | None = None) -> "EventRecord":
        return EventRecord(self.seq, schema_id or self.schema_id, tuple(fields), self.ts)


def make_record(schema_id: str, seq: int, values: dict[str, Any], ts: int | None = None) -> EventRecord:
    """Build a record, ordering fields by the schema declaration."""
    if schema_id in SCHEMAS:
        names = [name for name, _ in SCHEMAS[schema_id] if name in values]
        extra = [name for name in values if name not in names]
        if extra:
            raise RecordError(f"fields {extra} not declared by {schema_id}")
    else:
        names = list(values)
    return EventRecord(seq, schema_id, tuple((n, values[n]) for n in names), seq if ts is None else ts)


def validate(rec: EventRecord, subset: Iterable[str] | None = None) -> None:
    """Check the record carries every declared field (or ``subset``) with the right type."""
    if rec.schema_id not in SCHEMAS:
        return
    types = dict(SCHEMAS[rec.schema_id])
    wanted = list(types) if subset is None else list(subset)
    present = dict(rec.fields)
    for name in wanted:
        if name not in present:
            raise MissingField(f"{rec.schema_id} record lacks {name!r}")
        expected = types[name]
        value = present[name]
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            continue
        if not isinstance(value, expected):
            raise TypeMismatch(f"{name!r} should be {expected.__name__}")


def encode(rec: EventRecord) -> bytes:
    body = {"s": rec.schema_id, "q": rec.seq, "t": rec.ts, "f": [list(kv) for kv in rec.fields]}
    return json.dumps(body, separators=(",", ":")).encode()


def decode(payload: bytes) -> EventRecord:
    try:
        body = json.loads(payload)
        return EventRecord(int(body["q"]), body["s"], tuple((k, v) for k, v in body["f"]), int(body["t"]))
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedPayload(str(exc)) from exc


def to_json_line(rec: EventRecord) -> str:
    return json.dumps({"schema": rec.schema_id, "seq": rec.seq, "ts": rec.ts, "fields": dict(rec.fields)},
                      separators=(",", ":"))


def from_json_line(line: str) -> EventRecord:
    body = json.loads(line)
    return EventRecord(int(body["seq"]), body["schema"], tuple(body["fields"].items()),
                       int(body.get("ts", body["seq"])))
