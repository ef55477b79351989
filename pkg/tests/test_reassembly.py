import random

import pytest

from transportlab.errors import (
    BeyondDeclaredSize,
    DuplicateUid,
    NotContiguous,
    RangeUnavailable,
    TrimPastEnd,
    UnknownUid,
)
from transportlab.reassembly import INFINITE, RX, TX, DataUnitStore

from reference import FlatStore


@pytest.fixture
def store():
    return DataUnitStore()


def test_create_duplicate_uid(store):
    store.create(RX, "u1", 100)
    with pytest.raises(DuplicateUid):
        store.create(TX, "u1")


def test_unknown_uid(store):
    with pytest.raises(UnknownUid):
        store.add_rx_segment("nope", 0, b"x")


def test_out_of_order_segments_become_contiguous(store):
    store.create(RX, "u", 300)
    store.add_rx_segment("u", 0, bytes(100))
    store.add_rx_segment("u", 200, bytes(100))
    store.add_rx_segment("u", 100, bytes(100))
    assert store.get("u").contiguous_from_fub() == 300


def test_duplicate_segment_is_idempotent(store):
    store.create(RX, "u", INFINITE)
    store.add_rx_segment("u", 10, b"hello")
    before = store.get("u").fragments()
    store.add_rx_segment("u", 10, b"hello")
    assert store.get("u").fragments() == before


def test_overlap_first_writer_wins(store):
    store.create(RX, "u", INFINITE)
    store.add_rx_segment("u", 0, b"a" * 150)
    store.add_rx_segment("u", 100, b"b" * 150)
    frags = store.get("u").fragments()
    assert len(frags) == 1
    off, data = frags[0]
    assert off == 0 and len(data) == 250
    assert data[:150] == b"a" * 150
    assert data[150:] == b"b" * 100


def test_beyond_declared_size(store):
    store.create(RX, "u", 100)
    with pytest.raises(BeyondDeclaredSize):
        store.add_rx_segment("u", 90, bytes(20))


def test_flush_zero_is_noop(store):
    store.create(RX, "u", INFINITE)
    store.add_rx_segment("u", 0, b"abc")
    assert store.rx_flush("u", 0) == b""
    assert store.get("u").fub == 0


def test_flush_returns_exact_bytes(store):
    store.create(RX, "u", INFINITE)
    store.add_rx_segment("u", 0, b"hello world")
    assert store.rx_flush("u", 5) == b"hello"
    assert store.get("u").fub == 5
    assert store.rx_flush("u", 6) == b" world"


def test_flush_past_gap_raises(store):
    store.create(RX, "u", INFINITE)
    store.add_rx_segment("u", 0, bytes(100))
    store.add_rx_segment("u", 150, bytes(50))
    with pytest.raises(NotContiguous):
        store.rx_flush("u", 200)


def test_retired_duplicate_after_flush(store):
    store.create(RX, "u", INFINITE)
    store.add_rx_segment("u", 0, b"abcdef")
    store.rx_flush("u", 6)
    store.add_rx_segment("u", 0, b"zzzzzz")  # stale retransmit, fully below fub
    assert store.get("u").fragments() == []
    assert store.get("u").fub == 6


def test_fub_monotone_under_random_ops(store):
    rng = random.Random(7)
    store.create(RX, "u", INFINITE)
    fub = 0
    for _ in range(200):
        off = rng.randrange(0, 2000)
        store.add_rx_segment("u", off, bytes(rng.randrange(1, 100)))
        run = store.get("u").contiguous_from_fub()
        if run and rng.random() < 0.5:
            store.rx_flush("u", rng.randrange(1, run + 1))
        assert store.get("u").fub >= fub
        fub = store.get("u").fub


def test_canonical_fragment_form(store):
    rng = random.Random(3)
    store.create(RX, "u", INFINITE)
    for _ in range(300):
        off = rng.randrange(0, 4000)
        store.add_rx_segment("u", off, bytes([rng.randrange(256)]) * rng.randrange(1, 64))
        frags = store.get("u").fragments()
        for (s1, d1), (s2, d2) in zip(frags, frags[1:]):
            assert s1 + len(d1) < s2  # sorted, with a real gap between fragments


# -- TX ------------------------------------------------------------------

def test_tx_append_then_read(store):
    store.create(TX, "t")
    store.add_tx_data("t", b"x" * 100)
    store.add_tx_data("t", b"y" * 100)
    assert store.tx_read("t", 0, 200) == b"x" * 100 + b"y" * 100


def test_tx_append_empty_is_noop(store):
    store.create(TX, "t")
    store.add_tx_data("t", b"")
    assert store.get("t").appended == 0


def test_tx_read_is_pure(store):
    store.create(TX, "t")
    store.add_tx_data("t", b"retransmit me")
    first = store.tx_read("t", 0, 13)
    second = store.tx_read("t", 0, 13)
    assert first == second == b"retransmit me"


def test_tx_read_empty_range(store):
    store.create(TX, "t")
    assert store.tx_read("t", 0, 0) == b""


def test_tx_read_beyond_appended(store):
    store.create(TX, "t")
    store.add_tx_data("t", b"abc")
    with pytest.raises(RangeUnavailable):
        store.tx_read("t", 0, 4)


def test_tx_flush_then_read_below_cursor(store):
    store.create(TX, "t")
    store.add_tx_data("t", bytes(200))
    store.tx_flush("t", 100)
    with pytest.raises(RangeUnavailable):
        store.tx_read("t", 50, 10)
    assert store.tx_read("t", 100, 100) == bytes(100)


def test_tx_flush_zero_noop(store):
    store.create(TX, "t")
    store.add_tx_data("t", b"abc")
    store.tx_flush("t", 0)
    assert store.get("t").fub == 0


def test_tx_flush_past_end(store):
    store.create(TX, "t")
    store.add_tx_data("t", b"abc")
    with pytest.raises(TrimPastEnd):
        store.tx_flush("t", 4)


def test_tx_beyond_declared_size(store):
    store.create(TX, "t", 10)
    with pytest.raises(BeyondDeclaredSize):
        store.add_tx_data("t", bytes(11))


def test_direction_mismatch(store):
    store.create(TX, "t")
    with pytest.raises(UnknownUid):
        store.add_rx_segment("t", 0, b"x")


# -- oracle equivalence ----------------------------------------------------

def _scrambled_segments(rng, total, max_seg):
    """Cover [0, total) with random segments: shuffled, duplicated, overlapped."""
    segs = []
    pos = 0
    while pos < total:
        n = rng.randrange(1, max_seg)
        segs.append((pos, min(n, total - pos)))
        pos += n
    extras = [(max(0, s - rng.randrange(0, 40)), l + rng.randrange(0, 40))
              for s, l in rng.sample(segs, len(segs) // 3 or 1)]
    segs = segs + extras + rng.sample(segs, len(segs) // 4 or 1)
    rng.shuffle(segs)
    return [(s, min(l, total - s)) for s, l in segs]


@pytest.mark.parametrize("seed", range(8))
def test_byte_identity_against_flat_array(seed):
    rng = random.Random(seed)
    total = rng.randrange(1024, 65536)
    payload = rng.randbytes(total)
    store = DataUnitStore()
    store.create(RX, "u", total)
    oracle = FlatStore(total)
    for off, length in _scrambled_segments(rng, total, 1460):
        chunk = payload[off:off + length]
        store.add_rx_segment("u", off, chunk)
        oracle.write(off, chunk)
    assert store.get("u").contiguous_from_fub() == total
    assert oracle.covered(0, total)
    assert store.rx_flush("u", total) == oracle.read(0, total) == payload
