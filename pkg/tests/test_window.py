import random

import pytest

from transportlab.errors import RangeBeyondWindow
from transportlab.window import SlidingWindow

from reference import NaiveWindow


def test_mark_sets_range():
    w = SlidingWindow(capacity=16)
    w.mark(3, 5)
    assert w.get(3) and w.get(4)
    assert not w.get(2) and not w.get(5)


def test_mark_empty_range_is_noop():
    w = SlidingWindow(capacity=16)
    w.mark(7, 7)
    assert w.first(True) is None


def test_mark_below_head_is_noop():
    w = SlidingWindow(capacity=16, head=100)
    w.mark(90, 100)
    assert w.first(True) is None
    assert w.get(95)  # retired positions read as set


def test_mark_straddling_head_clips():
    w = SlidingWindow(capacity=16, head=10)
    w.mark(5, 13)
    assert w.first(True) == 10
    assert w.get(12) and not w.get(13)


def test_mark_beyond_capacity_raises():
    w = SlidingWindow(capacity=8)
    with pytest.raises(RangeBeyondWindow):
        w.mark(0, 9)


def test_first_set_and_unset():
    w = SlidingWindow(capacity=16)
    w.mark(3, 5)
    assert w.first(True) == 3
    assert w.first(False) == 0


def test_first_set_absent_when_all_unset():
    w = SlidingWindow(capacity=16)
    assert w.first(True) is None


def test_slide_to_first_unset():
    w = SlidingWindow(capacity=16)
    w.mark(0, 2)
    assert w.slide() == 2
    assert w.head == 2


def test_slide_noop_when_head_unset():
    w = SlidingWindow(capacity=16)
    assert w.slide() == 0


def test_slide_retires_flags():
    w = SlidingWindow(capacity=16)
    w.mark(0, 5)
    assert w.slide() == 5
    assert w.first(True) is None
    # sliding past everything leaves first-set absent
    assert w.first(False) == 5


def test_slide_full_window():
    w = SlidingWindow(capacity=8)
    w.mark(0, 8)
    assert w.slide() == 8
    assert w.first(True) is None


def test_wraparound_marks():
    head = (1 << 32) - 4
    w = SlidingWindow(capacity=16, head=head)
    w.mark(head, 4)  # 8 positions across the wrap point
    assert w.get((1 << 32) - 1)
    assert w.get(0) and w.get(3) and not w.get(4)
    assert w.slide() == 4


def test_reset_rebases():
    w = SlidingWindow(capacity=16)
    w.mark(0, 4)
    w.reset(1000)
    assert w.head == 1000
    assert w.first(True) is None


def _random_ops(rng, capacity, n):
    """Yield (op, args) valid for the current window state of both impls."""
    for _ in range(n):
        yield rng.choice(["mark", "unmark", "first", "slide", "get"])


@pytest.mark.parametrize("seed", range(6))
def test_matches_naive_reference(seed):
    rng = random.Random(seed)
    capacity = rng.choice([8, 32, 256])
    start = rng.choice([0, 1000, (1 << 32) - 300])
    real = SlidingWindow(capacity=capacity, head=start)
    ref = NaiveWindow(capacity=capacity, head=start)
    for op in _random_ops(rng, capacity, 1000):
        if op in ("mark", "unmark"):
            lo_off = rng.randrange(0, capacity)
            hi_off = rng.randrange(lo_off, capacity + 1)
            lo = (real.head + lo_off) % (1 << 32)
            hi = (real.head + hi_off) % (1 << 32)
            flag = op == "mark"
            real.mark(lo, hi, flag)
            ref.mark(lo, hi, flag)
        elif op == "first":
            flag = rng.random() < 0.5
            assert real.first(flag) == ref.first(flag)
        elif op == "get":
            pos = (real.head + rng.randrange(-4, capacity + 4)) % (1 << 32)
            assert real.get(pos) == ref.get(pos)
        else:
            assert real.slide() == ref.slide()
            assert real.head == ref.head
    assert real.first(True) == ref.first(True)
    assert real.first(False) == ref.first(False)


@pytest.mark.parametrize("seed", range(3))
def test_head_monotone(seed):
    rng = random.Random(100 + seed)
    w = SlidingWindow(capacity=64)
    prev_total = 0
    total = 0  # unwrapped head progress
    for _ in range(500):
        if rng.random() < 0.6:
            lo = rng.randrange(0, 64)
            hi = rng.randrange(lo, 65)
            w.mark((w.head + lo) % (1 << 32), (w.head + hi) % (1 << 32), rng.random() < 0.8)
        else:
            before = w.head
            w.slide()
            total += (w.head - before) % (1 << 32)
        assert total >= prev_total
        prev_total = total
