import random

import pytest

from transportlab.errors import ExprError, UnknownSegRule
from transportlab.headers import HeaderLayout
from transportlab.packetgen import (
    BOTH_PAYLOAD_EMPTY,
    KEEP_NEWEST,
    MERGE_PAYLOAD_APPEND,
    SAME_FLOW_ANY_PAYLOAD,
    Blueprint,
    CoalescingRule,
    Computed,
    DataPayload,
    FieldRule,
    NestedPayload,
    PendingPacket,
    SegRule,
    WirePacket,
    coalesce_into,
    eval_seg_expr,
    internet_checksum,
    lookup_srule,
    parse_expr,
    segment,
    serialize_transport,
)
from transportlab.reassembly import TX, DataUnitStore

from reference import ref_internet_checksum

TOY = HeaderLayout("toy", [("seq_no", 32), ("opcode", 8), ("flags", 8), ("ack", 32), ("checksum", 16)])
MSS = 1460


def toy_bp(payload=None, **over):
    values = {"seq_no": 1000, "opcode": 0, "flags": 0, "ack": 0, "checksum": 0}
    values.update(over)
    return Blueprint(TOY, values, payload)


def tx_store(nbytes, uid="u"):
    store = DataUnitStore()
    store.create(TX, uid)
    store.add_tx_data(uid, bytes(i % 251 for i in range(nbytes)))
    return store


# -- expressions -------------------------------------------------------------

def test_const_expr():
    assert eval_seg_expr(parse_expr("7"), {}, None) == 7


def test_prev_payload_len():
    assert eval_seg_expr(parse_expr("prev.payload_len"), {}, ({}, 1460)) == 1460


def test_sum_expr():
    e = parse_expr("bp.hdr.seq_no + prev.payload_len")
    assert eval_seg_expr(e, {"seq_no": 2460}, ({}, 1460)) == 3920


def test_expr_wraps_at_width():
    e = parse_expr("bp.hdr.seq_no + 10")
    assert eval_seg_expr(e, {"seq_no": (1 << 32) - 4}, None, width=32) == 6


def test_prev_without_packet_raises():
    with pytest.raises(ExprError):
        eval_seg_expr(parse_expr("prev.hdr.seq_no"), {}, None)


def test_unknown_field_raises():
    with pytest.raises(ExprError):
        eval_seg_expr(parse_expr("bp.hdr.nope"), {"seq_no": 1}, None)


def test_first_rule_may_not_use_prev():
    with pytest.raises(ExprError):
        FieldRule("seq_no", "prev.hdr.seq_no", "0", "0")


# -- segmentation ------------------------------------------------------------

TCP_SEQ_RULE = SegRule(1, (FieldRule("seq_no", "bp.hdr.seq_no",
                                     "prev.hdr.seq_no + prev.payload_len",
                                     "prev.hdr.seq_no + prev.payload_len"),))


def test_tcp_rule_three_segments():
    bp = toy_bp(DataPayload("u", 0, 3 * MSS, MSS), seq_no=1000)
    pkts = segment(bp, TCP_SEQ_RULE)
    assert [p.values["seq_no"] for p in pkts] == [1000, 2460, 3920]
    assert [p.payload.length for p in pkts] == [MSS, MSS, MSS]
    assert [p.payload.offset for p in pkts] == [0, MSS, 2 * MSS]


def test_ten_mss_burst():
    bp = toy_bp(DataPayload("u", 0, 10 * MSS, MSS), seq_no=5000)
    pkts = segment(bp, TCP_SEQ_RULE)
    assert len(pkts) == 10
    assert [p.values["seq_no"] for p in pkts] == [5000 + i * MSS for i in range(10)]


def test_roce_opcode_rule():
    rule = SegRule(2, (FieldRule("opcode", 0, 1, 2),))
    bp = toy_bp(DataPayload("u", 0, 3 * MSS, MSS))
    pkts = segment(bp, rule)
    assert [p.values["opcode"] for p in pkts] == [0, 1, 2]


def test_single_packet_takes_only_defaulting_to_first():
    rule = SegRule(3, (FieldRule("opcode", 0, 1, 2),))
    bp = toy_bp(DataPayload("u", 0, 100, MSS))
    pkts = segment(bp, rule)
    assert len(pkts) == 1 and pkts[0].values["opcode"] == 0
    only_rule = SegRule(4, (FieldRule("opcode", 0, 1, 2, only=9),))
    assert segment(bp, only_rule)[0].values["opcode"] == 9


def test_two_segments_skip_mid():
    rule = SegRule(5, (FieldRule("opcode", 0, 1, 2),))
    bp = toy_bp(DataPayload("u", 0, 2 * MSS, MSS))
    assert [p.values["opcode"] for p in segment(bp, rule)] == [0, 2]


def test_segment_count_and_payload_cover():
    rng = random.Random(1)
    for _ in range(30):
        n = rng.randrange(0, 9000)
        unit = rng.choice([100, 536, 1460])
        bp = toy_bp(DataPayload("u", 50, n, unit))
        pkts = segment(bp, TCP_SEQ_RULE)
        assert len(pkts) == max(1, -(-n // unit))
        assert sum(p.payload.length for p in pkts) == n
        offs = [p.payload.offset for p in pkts]
        assert offs == [50 + i * unit for i in range(len(pkts))]


def test_segmentation_deterministic():
    bp = toy_bp(DataPayload("u", 0, 5 * MSS, MSS), seq_no=77)
    a = segment(bp, TCP_SEQ_RULE)
    b = segment(bp, TCP_SEQ_RULE)
    assert [p.values for p in a] == [p.values for p in b]


def test_no_payload_single_packet():
    pkts = segment(toy_bp(None), TCP_SEQ_RULE)
    assert len(pkts) == 1 and pkts[0].payload is None


def test_lookup_unknown_srule():
    with pytest.raises(UnknownSegRule):
        lookup_srule({1: TCP_SEQ_RULE}, 2)


# -- checksum ----------------------------------------------------------------

def test_checksum_empty():
    assert internet_checksum(b"") == 0xFFFF


def test_checksum_spec_vector():
    # Frozen from the byte-pair reference implementation (itself validated
    # against the classic IPv4-header vector below).
    data = bytes.fromhex("0001f203f4f5f6f7")
    assert ref_internet_checksum(data) == 0x220D
    assert internet_checksum(data) == 0x220D


def test_checksum_ipv4_header_vector():
    ip = bytes.fromhex("450000730000400040110000c0a80001c0a800c7")
    assert internet_checksum(ip) == ref_internet_checksum(ip) == 0xB861


def test_checksum_matches_reference_randomized():
    rng = random.Random(9)
    for _ in range(200):
        data = rng.randbytes(rng.randrange(0, 100))
        assert internet_checksum(data) == ref_internet_checksum(data)


def test_checksum_self_verifies():
    rng = random.Random(10)
    for _ in range(50):
        data = rng.randbytes(rng.randrange(2, 80) * 2)
        ck = internet_checksum(data)
        assert internet_checksum(data + ck.to_bytes(2, "big")) == 0


# -- serialization -----------------------------------------------------------

def test_all_zero_header_checksum():
    layout = HeaderLayout("z", [("a", 32), ("b", 32), ("c", 32), ("d", 32), ("checksum", 16), ("pad", 16)])
    bp = Blueprint(layout, {"a": 0, "b": 0, "c": 0, "d": 0, "checksum": Computed(), "pad": 0})
    wire = serialize_transport(bp, DataUnitStore())
    lo, hi = layout.byte_span("checksum")
    assert wire[lo:hi] == b"\xff\xff"


def test_serialize_fetches_payload_via_tx_read():
    store = tx_store(3 * MSS)
    bp = toy_bp(DataPayload("u", MSS, 100, MSS))
    wire = serialize_transport(bp, store)
    assert wire[TOY.byte_size:] == bytes((MSS + i) % 251 for i in range(100))


def test_serialize_roundtrip_fields():
    store = tx_store(500)
    bp = toy_bp(DataPayload("u", 0, 200, MSS), seq_no=123456, flags=7, ack=99)
    wire = serialize_transport(bp, store)
    seen = TOY.unpack(wire)
    assert seen["seq_no"] == 123456 and seen["flags"] == 7 and seen["ack"] == 99


def test_serialized_packet_self_verifies():
    store = tx_store(500)
    bp = toy_bp(DataPayload("u", 0, 321, MSS), seq_no=42, checksum=Computed())
    wire = serialize_transport(bp, store)
    assert internet_checksum(wire) == 0


def test_options_bytes_between_header_and_payload():
    store = tx_store(100)
    bp = Blueprint(TOY, toy_bp().values, DataPayload("u", 0, 10, MSS), options=b"\xAA\xBB")
    wire = serialize_transport(bp, store)
    assert wire[TOY.byte_size:TOY.byte_size + 2] == b"\xAA\xBB"
    assert len(wire) == TOY.byte_size + 2 + 10


def test_nested_payload_lengths():
    store = tx_store(4000, uid="s1")
    store.create(TX, "s2")
    store.add_tx_data("s2", bytes(300))
    frame = HeaderLayout("frame", [("stream_id", 32), ("offset", 32), ("length", 16)])
    f1 = Blueprint(frame, {"stream_id": 1, "offset": 0, "length": 200}, DataPayload("s1", 0, 200, MSS))
    f2 = Blueprint(frame, {"stream_id": 2, "offset": 0, "length": 300}, DataPayload("s2", 0, 300, MSS))
    outer = Blueprint(TOY, toy_bp(checksum=Computed()).values, NestedPayload((f1, f2)))
    wire = serialize_transport(outer, store)
    inner_len = (frame.byte_size + 200) + (frame.byte_size + 300)
    assert len(wire) == TOY.byte_size + inner_len
    assert internet_checksum(wire) == 0


def test_checksum_with_field_coverage():
    bp = toy_bp(checksum=Computed(coverage=("seq_no", "ack")), seq_no=5, ack=6)
    wire = serialize_transport(bp, DataUnitStore())
    lo, hi = TOY.byte_span("checksum")
    covered = wire[slice(*TOY.byte_span("seq_no"))] + wire[slice(*TOY.byte_span("ack"))]
    assert wire[lo:hi] == ref_internet_checksum(covered).to_bytes(2, "big")


# -- wire packets -------------------------------------------------------------

def test_wire_packet_roundtrip():
    pkt = WirePacket(1, 2, 0x0A000001, 0x0A000002, b"hello transport")
    back = WirePacket.from_bytes(pkt.to_bytes())
    assert (back.src_host, back.dst_host) == (1, 2)
    assert (back.src_addr, back.dst_addr) == (0x0A000001, 0x0A000002)
    assert back.transport == b"hello transport"
    assert back.total_length == 12 + len(b"hello transport")


def test_wire_packet_length_consistency():
    pkt = WirePacket(0, 1, 5, 6, bytes(40))
    raw = bytearray(pkt.to_bytes())
    raw[12:16] = (999).to_bytes(4, "big")  # corrupt the length
    with pytest.raises(ValueError):
        WirePacket.from_bytes(bytes(raw))


# -- coalescing ---------------------------------------------------------------

ACK_RULE = CoalescingRule(match_fields=("flags",), guard=BOTH_PAYLOAD_EMPTY, action=KEEP_NEWEST)


def test_keep_newest_replaces_in_place():
    ring = []
    coalesce_into(ring, PendingPacket(toy_bp(ack=100, flags=16)), (ACK_RULE,))
    coalesce_into(ring, PendingPacket(toy_bp(ack=200, flags=16)), (ACK_RULE,))
    assert len(ring) == 1
    assert ring[0].blueprint.values["ack"] == 200


def test_no_coalesce_when_fields_differ():
    ring = []
    coalesce_into(ring, PendingPacket(toy_bp(flags=2)), (ACK_RULE,))   # SYN-ish
    coalesce_into(ring, PendingPacket(toy_bp(flags=16)), (ACK_RULE,))  # pure ack
    assert len(ring) == 2


def test_no_coalesce_when_payload_present():
    ring = []
    coalesce_into(ring, PendingPacket(toy_bp(DataPayload("u", 0, 10, MSS), flags=16)), (ACK_RULE,))
    coalesce_into(ring, PendingPacket(toy_bp(flags=16)), (ACK_RULE,))
    assert len(ring) == 2


def test_merge_payload_append_contiguous():
    rule = CoalescingRule(match_fields=(), guard=SAME_FLOW_ANY_PAYLOAD, action=MERGE_PAYLOAD_APPEND)
    ring = []
    coalesce_into(ring, PendingPacket(toy_bp(DataPayload("u", 0, 100, MSS))), (rule,))
    coalesce_into(ring, PendingPacket(toy_bp(DataPayload("u", 100, 50, MSS))), (rule,))
    assert len(ring) == 1
    assert ring[0].blueprint.payload.length == 150


def test_merge_payload_append_rejects_gap():
    rule = CoalescingRule(match_fields=(), guard=SAME_FLOW_ANY_PAYLOAD, action=MERGE_PAYLOAD_APPEND)
    ring = []
    coalesce_into(ring, PendingPacket(toy_bp(DataPayload("u", 0, 100, MSS))), (rule,))
    coalesce_into(ring, PendingPacket(toy_bp(DataPayload("u", 300, 50, MSS))), (rule,))
    assert len(ring) == 2
