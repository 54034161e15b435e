from collections import deque

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamleak.engine import EMPTY, RingBuffer


def test_capacity_leaves_one_slot_empty():
    buf = RingBuffer(4)
    assert [buf.push(i) for i in range(4)] == [True, True, True, False]
    assert buf.is_full() and len(buf) == 3 and buf.free_slots() == 0


def test_pop_empty_returns_sentinel():
    buf = RingBuffer(2)
    assert buf.pop() is EMPTY
    assert buf.is_empty()


def test_wraparound_keeps_fifo_order():
    buf = RingBuffer(3)
    got = []
    for i in range(10):
        assert buf.push(i)
        got.append(buf.pop())
    assert got == list(range(10))
    assert buf.pushes == buf.pops == 10


def test_rejects_tiny_capacity():
    with pytest.raises(ValueError):
        RingBuffer(1)


def test_full_push_leaves_buffer_untouched():
    buf = RingBuffer(2)
    buf.push("a")
    head, tail = buf.head, buf.tail
    assert not buf.push("b")
    assert (buf.head, buf.tail) == (head, tail)
    assert buf.pop() == "a"


@settings(max_examples=200, deadline=None)
@given(capacity=st.integers(2, 9), ops=st.lists(st.booleans(), max_size=300))
def test_matches_reference_queue(capacity, ops):
    buf, ref = RingBuffer(capacity), deque()
    for n, is_push in enumerate(ops):
        if is_push:
            ok = buf.push(n)
            assert ok == (len(ref) < capacity - 1)
            if ok:
                ref.append(n)
        else:
            got = buf.pop()
            if ref:
                assert got == ref.popleft()
            else:
                assert got is EMPTY
        assert len(buf) == len(ref)
        assert buf.is_empty() == (buf.head == buf.tail) == (not ref)
        assert buf.is_full() == ((buf.head + 1) % capacity == buf.tail) == (len(ref) == capacity - 1)
