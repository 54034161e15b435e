"""Fixed-capacity single-producer/single-consumer circular buffer.

Full when advancing ``head`` would land on ``tail`` (one slot stays empty),
empty when ``head == tail``. The producer only writes ``head``, the consumer
only writes ``tail``; each index is published after the slot it guards is
written, so plain attribute stores are enough under the GIL. ``tail`` is the
observation surface of the timing attack.
"""
from __future__ import annotations

from typing import Any

_EMPTY = object()


class RingBuffer:
    __slots__ = ("capacity", "_slots", "head", "tail", "pops", "pushes")

    def __init__(self, capacity: int = 1024):
        if capacity < 2:
            raise ValueError("capacity must be >= 2")
        self.capacity = capacity
        self._slots: list[Any] = [None] * capacity
        self.head = 0
        self.tail = 0
        # monotone counters; readable by observers that must not miss wraparound
        self.pushes = 0
        self.pops = 0

    def push(self, item) -> bool:
        """Append ``item``; returns False (buffer untouched) when full."""
        nxt = self.head + 1
        if nxt == self.capacity:
            nxt = 0
        if nxt == self.tail:
            return False
        self._slots[self.head] = item
        self.head = nxt
        self.pushes += 1
        return True

    def pop(self):
        """Oldest unread item, or ``EMPTY`` when there is none."""
        tail = self.tail
        if tail == self.head:
            return _EMPTY
        item = self._slots[tail]
        self._slots[tail] = None
        tail += 1
        if tail == self.capacity:
            tail = 0
        self.tail = tail
        self.pops += 1
        return item

    def __len__(self):
        return (self.head - self.tail) % self.capacity

    def is_empty(self) -> bool:
        return self.head == self.tail

    def is_full(self) -> bool:
        return (self.head + 1) % self.capacity == self.tail

    def free_slots(self) -> int:
        return self.capacity - 1 - len(self)


EMPTY = _EMPTY


def ring_push(buf: RingBuffer, item) -> bool:
    return buf.push(item)


def ring_pop(buf: RingBuffer):
    return buf.pop()
