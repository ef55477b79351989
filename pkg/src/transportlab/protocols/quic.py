"""QUIC-lite: multiple streams per connection with per-stream ordering.

Outgoing packets are nested blueprints: an outer connection header carrying
one or more stream frames (stream id, offset, length, data).  The stream
scheduler round-robins across streams with pending data, switching every
100 KB.  Acks are connection-level and cumulative by packet number; a packet
is retransmitted (under its original number, so the cumulative account can
fill) after three duplicate acks or on the retransmit timer.  Each stream
delivers independently, so one stream's loss never holds back another.
"""

from types import SimpleNamespace

from ..chain import DispatchTable
from ..context import PER_FLOW, ContextSpec
from ..events import APPLICATION, NETWORK, Event
from ..headers import HeaderLayout
from ..intervals import contiguous_from_zero, insert_interval
from ..instructions import (
    START,
    STOP,
    AddRxSegment,
    AddTxData,
    NewCtx,
    NewOrderedData,
    Notify,
    PktGen,
    RxFlushAndNotify,
    TimerOp,
    TxFlush,
)
from ..packetgen import (
    BOTH_PAYLOAD_EMPTY,
    KEEP_NEWEST,
    Blueprint,
    CoalescingRule,
    Computed,
    DataPayload,
    NestedPayload,
)
from ..reassembly import RX, TX
from ..registry import DeploySpec, EventSchedSpec
from ..scheduler import default_fifo_spec

DATA_PKT, ACK_PKT = 0, 1

STREAM_TURN = 100_000     # bytes sent on one stream before switching
INFLIGHT_CAP = 64         # unacked packets the sender keeps in flight
DUP_ACK_THRESHOLD = 3     # packet-number reordering threshold
RTO_INIT = 200_000_000
RTO_MAX = 2_000_000_000
GBN_BATCH = 32            # unacked packets retransmitted per timer firing

OUTER = HeaderLayout("quic_lite", [
    ("src_port", 16), ("dst_port", 16),
    ("conn_id", 32), ("pkt_type", 8),
    ("pkt_no", 32), ("ack_no", 32),
    ("frame_count", 8), ("checksum", 16),
])

FRAME = HeaderLayout("quic_stream_frame", [
    ("stream_id", 32), ("offset", 32), ("length", 16),
])


def tx_uid(flow, stream):
    return ("tx", flow, stream)


def rx_uid(flow, stream):
    return ("rx", flow, stream)


def _conn_id(flow):
    return (flow[1] << 16 | flow[3]) & 0xFFFFFFFF


def _outer(flow, ptype, pn=0, ack=0, frames=0):
    return {
        "src_port": flow[1], "dst_port": flow[3],
        "conn_id": _conn_id(flow), "pkt_type": ptype,
        "pkt_no": pn, "ack_no": ack,
        "frame_count": frames, "checksum": Computed(),
    }


def _data_packet(flow, pn, frames):
    parts = []
    for stream, offset, length in frames:
        parts.append(Blueprint(FRAME, {"stream_id": stream, "offset": offset, "length": length},
                               DataPayload(tx_uid(flow, stream), offset, length)))
    bp = Blueprint(OUTER, _outer(flow, DATA_PKT, pn=pn, frames=len(parts)),
                   NestedPayload(tuple(parts)))
    return bp


# -- sender ----------------------------------------------------------------------

def connect_ep(ev, ctxs, pad, out):
    flow = ev.keys["conn"]
    out.append(NewCtx("conn", flow, {"smss": ev.meta["mss"]}))
    out.append(Notify(flow, {"what": "connected"}))


def record_stream_data(ev, ctxs, pad, out):
    ctx = ctxs.conn
    flow = ev.keys["conn"]
    stream = ev.meta["stream"]
    data = ev.meta["data"]
    entry = ctx.streams_tx.get(stream)
    if entry is None:
        entry = {"appended": 0, "emitted": 0, "acked": [], "flushed": 0}
        ctx.streams_tx[stream] = entry
        ctx.rr_order.append(stream)
        out.append(NewOrderedData(TX, tx_uid(flow, stream), None))
    out.append(AddTxData(tx_uid(flow, stream), data))
    entry["appended"] += len(data)


def _pick_stream(ctx):
    n = len(ctx.rr_order)
    for k in range(n):
        idx = (ctx.rr_idx + k) % n
        stream = ctx.rr_order[idx]
        e = ctx.streams_tx[stream]
        if e["appended"] > e["emitted"]:
            if k > 0:  # switched streams: a fresh turn begins
                ctx.rr_idx = idx
                ctx.turn_left = STREAM_TURN
            return stream
    return None


def sched_streams(ev, ctxs, pad, out):
    """Emit data packets round-robin across streams, 100 KB per turn."""
    ctx = ctxs.conn
    flow = ev.keys["conn"]
    frame_cap = ctx.smss - FRAME.byte_size
    emitted = False
    while len(ctx.sent) < INFLIGHT_CAP:
        stream = _pick_stream(ctx)
        if stream is None:
            break
        entry = ctx.streams_tx[stream]
        chunk = min(frame_cap, entry["appended"] - entry["emitted"], max(1, ctx.turn_left))
        pn = ctx.next_pn
        ctx.next_pn += 1
        frames = ((stream, entry["emitted"], chunk),)
        ctx.sent[pn] = frames
        out.append(PktGen(flow, _data_packet(flow, pn, frames)))
        entry["emitted"] += chunk
        ctx.turn_left -= chunk
        if ctx.turn_left <= 0:
            ctx.rr_idx = (ctx.rr_idx + 1) % max(1, len(ctx.rr_order))
            ctx.turn_left = STREAM_TURN
        emitted = True
    if emitted and not ctx.timer_running:
        out.append(TimerOp(flow, "rtx", START, ctx.rto))
        ctx.timer_running = True


def _retransmit_pn(ctx, flow, pn, out):
    frames = ctx.sent.get(pn)
    if frames is None:
        return
    bp = _data_packet(flow, pn, frames)
    out.append(PktGen(flow, bp, tags=("retx",)))


def proc_ack(ev, ctxs, pad, out):
    ctx = ctxs.conn
    flow = ev.keys["conn"]
    ack = ev.meta["ack_no"]
    if ack > ctx.ack_base:
        for pn in range(ctx.ack_base, ack):
            frames = ctx.sent.pop(pn, None)
            if not frames:
                continue
            for stream, offset, length in frames:
                entry = ctx.streams_tx[stream]
                insert_interval(entry["acked"], offset, offset + length)
                contig = contiguous_from_zero(entry["acked"])
                if contig > entry["flushed"]:
                    out.append(TxFlush(tx_uid(flow, stream), contig - entry["flushed"]))
                    entry["flushed"] = contig
                    if entry["flushed"] >= entry["appended"] and entry["emitted"] >= entry["appended"]:
                        out.append(Notify(flow, {"what": "stream_sent", "stream": stream}))
        ctx.ack_base = ack
        ctx.dup_acks = 0
        ctx.rto = RTO_INIT
        if ctx.sent:
            out.append(TimerOp(flow, "rtx", START, ctx.rto))
            ctx.timer_running = True
        else:
            out.append(TimerOp(flow, "rtx", STOP))
            ctx.timer_running = False
    elif ack == ctx.ack_base and ctx.sent:
        ctx.dup_acks += 1
        if ctx.dup_acks >= DUP_ACK_THRESHOLD and ctx.last_retx_base != ctx.ack_base:
            _retransmit_pn(ctx, flow, ctx.ack_base, out)
            ctx.last_retx_base = ctx.ack_base
            ctx.dup_acks = 0


def rtx_timeout(ev, ctxs, pad, out):
    ctx = ctxs.conn
    flow = ev.keys["conn"]
    if not ctx.sent:
        ctx.timer_running = False
        return
    for pn in sorted(ctx.sent)[:GBN_BATCH]:
        _retransmit_pn(ctx, flow, pn, out)
    ctx.rto = min(ctx.rto * 2, RTO_MAX)
    ctx.dup_acks = 0
    out.append(TimerOp(flow, "rtx", START, ctx.rto))
    ctx.timer_running = True


# -- receiver ---------------------------------------------------------------------

def _conn_defaults(smss):
    return {
        "smss": smss, "next_pn": 0, "ack_base": 0, "dup_acks": 0,
        "last_retx_base": -1, "rto": RTO_INIT, "timer_running": False,
        "sent": {}, "streams_tx": {}, "rr_order": [], "rr_idx": 0,
        "turn_left": STREAM_TURN, "rcv_pns": set(), "rcv_next": 0,
        "streams_rx": {},
    }


def recv_packet(ev, ctxs, pad, out):
    flow = ev.keys["conn"]
    fresh = not ctxs.has("conn")
    if fresh:
        # first packet of an inbound connection: seed state from scratch and
        # register it with a new_ctx instruction
        ctx = SimpleNamespace(**_conn_defaults(1460))
    else:
        ctx = ctxs.conn
    pn = ev.meta["pkt_no"]
    if pn not in ctx.rcv_pns:
        ctx.rcv_pns.add(pn)
        while ctx.rcv_next in ctx.rcv_pns:
            ctx.rcv_pns.discard(ctx.rcv_next)
            ctx.rcv_next += 1
        for stream, offset, length, data in ev.meta["frames"]:
            entry = ctx.streams_rx.get(stream)
            if entry is None:
                entry = {"intervals": [], "flushed": 0}
                ctx.streams_rx[stream] = entry
                out.append(NewOrderedData(RX, rx_uid(flow, stream), None))
            insert_interval(entry["intervals"], offset, offset + length)
            out.append(AddRxSegment(rx_uid(flow, stream), offset, data))
            contig = contiguous_from_zero(entry["intervals"])
            if contig > entry["flushed"]:
                out.append(RxFlushAndNotify(rx_uid(flow, stream), contig - entry["flushed"], None))
                entry["flushed"] = contig
    if fresh:
        init = {k: getattr(ctx, k) for k in _conn_defaults(0) if k != "smss"}
        out.append(NewCtx("conn", flow, init))
    out.append(PktGen(flow, Blueprint(OUTER, _outer(flow, ACK_PKT, ack=ctx.rcv_next))))


# -- parser -----------------------------------------------------------------------

def parse_packet(transport, meta):
    values = OUTER.unpack(transport)
    local, remote = meta["dst_addr"], meta["src_addr"]
    flow = (local, values["dst_port"], remote, values["src_port"])
    if values["pkt_type"] == ACK_PKT:
        return [Event(NETWORK, "quic_ack", keys={"conn": flow},
                      meta={"ack_no": values["ack_no"]})]
    frames = []
    cursor = OUTER.byte_size
    for _ in range(values["frame_count"]):
        fh = FRAME.unpack(transport[cursor:])
        cursor += FRAME.byte_size
        data = transport[cursor:cursor + fh["length"]]
        cursor += fh["length"]
        frames.append((fh["stream_id"], fh["offset"], fh["length"], data))
    return [Event(NETWORK, "quic_data", keys={"conn": flow},
                  meta={"pkt_no": values["pkt_no"], "frames": tuple(frames)},
                  payload=transport[OUTER.byte_size:])]


# -- deploy ----------------------------------------------------------------------

def context_specs(mss):
    conn = ContextSpec("conn", PER_FLOW, 4, fields=(
        ("smss", "uint32", mss),
        ("next_pn", "uint32", 0),
        ("ack_base", "uint32", 0),
        ("dup_acks", "uint8", 0),
        ("last_retx_base", "int64", -1),
        ("rto", "ns", RTO_INIT),
        ("timer_running", "bool", False),
        ("sent", "map", {}),
        ("streams_tx", "map", {}),
        ("rr_order", "list", []),
        ("rr_idx", "uint8", 0),
        ("turn_left", "uint32", STREAM_TURN),
        ("rcv_pns", "set", set()),
        ("rcv_next", "uint32", 0),
        ("streams_rx", "map", {}),
    ), timers=(("rtx", "quic_timeout"),))
    return (conn,)


def build_deploy_spec(mss=1460):
    dispatch = DispatchTable({
        "quic_connect": ("connect_ep",),
        "quic_send": ("record_stream_data", "sched_streams"),
        "quic_data": ("recv_packet",),
        "quic_ack": ("proc_ack", "sched_streams"),
        "quic_timeout": ("rtx_timeout",),
    })
    processors = {
        "connect_ep": connect_ep,
        "record_stream_data": record_stream_data,
        "sched_streams": sched_streams,
        "recv_packet": recv_packet,
        "proc_ack": proc_ack,
        "rtx_timeout": rtx_timeout,
    }
    return DeploySpec(
        name="quic",
        dispatch=dispatch,
        processors=processors,
        ctx_specs=context_specs(mss),
        parser=parse_packet,
        seg_rules={},
        coalescing_rules=(CoalescingRule(match_fields=("pkt_type", "conn_id"),
                                         guard=BOTH_PAYLOAD_EMPTY, action=KEEP_NEWEST),),
        pkt_sched=default_fifo_spec(),
        ev_sched=EventSchedSpec(),
        scratch={},
        srule_refs=(),
    )


# -- simulator app driver -----------------------------------------------------------

class Driver:
    name = "quic"
    connect_oriented = True
    message_based = False

    def __init__(self, mss, rng, **_params):
        self.mss = mss

    def listen_key(self, flow):
        return None

    def listen_events(self, flow):
        return []

    def connect_event(self, flow):
        return Event(APPLICATION, "quic_connect", keys={"conn": flow.client_key},
                     meta={"mss": self.mss})

    def send_event(self, flow, host, stream, data):
        key = flow.client_key if host == flow.src else flow.server_key
        return Event(APPLICATION, "quic_send", keys={"conn": key},
                     meta={"stream": stream, "data": data})

    def recv_event(self, flow, host, want, addr):
        return None  # streams flush to the application as data arrives

    def on_notify(self, flow, host, payload):
        return []
