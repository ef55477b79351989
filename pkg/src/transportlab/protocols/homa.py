"""Homa-lite: a receiver-driven message protocol.

Senders blast an unscheduled prefix (60 KB by default) and then wait for
grants.  The receiver keeps one grant-control context per local address with
a global view of inbound messages and extends credit to the message with the
fewest remaining bytes (SRPT), never exceeding its outstanding-grant budget.
Loss recovery is receiver-driven (resend requests at the first gap) with a
sender-side timer as a backstop for fully-lost prefixes.  A DONE control
packet acknowledges complete messages so senders can release state.
"""

from ..chain import DispatchTable
from ..context import GROUP, PER_FLOW, ContextSpec
from ..events import APPLICATION, NETWORK, Event
from ..headers import HeaderLayout
from ..intervals import contiguous_from_zero as _contig, insert_interval as _insert_interval
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
    FieldRule,
    SegRule,
)
from ..reassembly import RX, TX
from ..registry import DeploySpec, EventSchedSpec
from ..scheduler import STRICT_PRIORITY, BlockSpec, QueueRef, SchedulerSpec

DATA, GRANT, RESEND, DONE = 0, 1, 2, 3

UNSCHEDULED = 60_000          # bytes sent without waiting for grants
GRANT_BUDGET = 60_000         # outstanding granted-but-unreceived bytes cap
SENDER_TIMEOUT = 20_000_000   # 20 ms backstop
RECV_TIMEOUT = 10_000_000     # 10 ms gap detector
PRIO_LEVELS = 8               # queue 0 = grants/control, 1..7 = data classes
SIZE_CLASS_BOUNDS = (1500, 10_000, 20_000, 40_000, 60_000, 100_000, 400_000)

HEADER = HeaderLayout("homa_lite", [
    ("src_port", 16), ("dst_port", 16),
    ("type", 8), ("prio", 8),
    ("msg_id", 32), ("msg_len", 32),
    ("offset", 32), ("grant_offset", 32), ("grant_limit", 32),
    ("checksum", 16),
])

OFFSET_RULE = SegRule(1, (FieldRule("offset", "bp.hdr.offset",
                                    "prev.hdr.offset + prev.payload_len",
                                    "prev.hdr.offset + prev.payload_len"),))


def size_class(length):
    """Unscheduled data priority from the message-size class table."""
    for i, bound in enumerate(SIZE_CLASS_BOUNDS):
        if length <= bound:
            return i + 1
    return 7


def msg_uid(direction, flow, msg_id):
    return (direction, flow, msg_id)


def _bp(flow, ptype, msg_id, msg_len, prio, offset=0, grant_offset=0, grant_limit=0,
        payload=None):
    values = {
        "src_port": flow[1], "dst_port": flow[3],
        "type": ptype, "prio": prio,
        "msg_id": msg_id, "msg_len": msg_len,
        "offset": offset, "grant_offset": grant_offset, "grant_limit": grant_limit,
        "checksum": Computed(),
    }
    return Blueprint(HEADER, values, payload)


def _ctrl(flow, ptype, msg_id, msg_len, cursor, limit):
    return PktGen(flow, _bp(flow, ptype, msg_id, msg_len, 0,
                            grant_offset=cursor, grant_limit=limit),
                  queue=QueueRef("spq", 0), priority=0)


def _resend_timer(rpc_key):
    return TimerOp(rpc_key, "resend", START, RECV_TIMEOUT,
                   keys={"rpc": rpc_key, "grants": (rpc_key[0],)})


def _send_range(ctx, flow, msg_id, lo, hi, out, retx=False):
    if hi <= lo:
        return
    payload = DataPayload(msg_uid("tx", flow, msg_id), lo, hi - lo, ctx.smss)
    bp = _bp(flow, DATA, msg_id, ctx.length, ctx.prio, offset=lo, payload=payload)
    out.append(PktGen(flow, bp, srule_id=1, queue=QueueRef("spq", ctx.prio),
                      priority=ctx.prio, tags=("retx",) if retx else ()))


# -- sender ---------------------------------------------------------------------

def listen_ep(ev, ctxs, pad, out):
    out.append(NewCtx("grants", ev.keys["grants"], {
        "budget": ev.meta["budget"],
        "unscheduled": ev.meta["unscheduled"],
    }))


def send_msg(ev, ctxs, pad, out):
    flow = ev.keys["rpc"][:4]
    msg_id = ev.meta["msg_id"]
    data = ev.meta["data"]
    length = len(data)
    unscheduled = min(length, ev.meta["unscheduled"])
    prio = size_class(length)
    out.append(NewCtx("rpc", ev.keys["rpc"], {
        "role": "sender",
        "length": length,
        "smss": ev.meta["mss"],
        "prio": prio,
        "granted": unscheduled,
        "send_cursor": unscheduled,
        "unscheduled": unscheduled,
    }))
    uid = msg_uid("tx", flow, msg_id)
    out.append(NewOrderedData(TX, uid, length))
    out.append(AddTxData(uid, data))
    payload = DataPayload(uid, 0, unscheduled, ev.meta["mss"])
    out.append(PktGen(flow, _bp(flow, DATA, msg_id, length, prio, offset=0, payload=payload),
                      srule_id=1, queue=QueueRef("spq", prio), priority=prio))
    out.append(TimerOp(ev.keys["rpc"], "rtx", START, SENDER_TIMEOUT))


def proc_grant(ev, ctxs, pad, out):
    ctx = ctxs.rpc
    rpc_key = ev.keys["rpc"]
    flow = rpc_key[:4]
    msg_id = ev.meta["msg_id"]
    if ctx.done:
        return  # stale grant for a completed message
    cursor = ev.meta["grant_offset"]
    if cursor > ctx.acked_cursor:
        out.append(TxFlush(msg_uid("tx", flow, msg_id), min(cursor, ctx.length) - ctx.acked_cursor))
        ctx.acked_cursor = min(cursor, ctx.length)
    ctx.granted = max(ctx.granted, min(ev.meta["grant_limit"], ctx.length))
    _send_range(ctx, flow, msg_id, ctx.send_cursor, ctx.granted, out)
    ctx.send_cursor = max(ctx.send_cursor, ctx.granted)
    out.append(TimerOp(rpc_key, "rtx", START, SENDER_TIMEOUT))


def proc_done(ev, ctxs, pad, out):
    ctx = ctxs.rpc
    rpc_key = ev.keys["rpc"]
    flow = rpc_key[:4]
    if ctx.done:
        return
    ctx.done = True
    if ctx.acked_cursor < ctx.length:
        out.append(TxFlush(msg_uid("tx", flow, rpc_key[4]), ctx.length - ctx.acked_cursor))
        ctx.acked_cursor = ctx.length
    out.append(TimerOp(rpc_key, "rtx", STOP))
    out.append(Notify(flow, {"what": "msg_sent", "msg_id": rpc_key[4]}))


def proc_resend(ev, ctxs, pad, out):
    ctx = ctxs.rpc
    rpc_key = ev.keys["rpc"]
    flow = rpc_key[:4]
    if ctx.done:
        return
    ctx.granted = max(ctx.granted, min(ev.meta["grant_limit"], ctx.length))
    lo = ev.meta["offset"]
    hi = min(lo + ctx.unscheduled, ctx.granted, ctx.length)
    _send_range(ctx, flow, ev.meta["msg_id"], lo, hi, out, retx=True)
    ctx.send_cursor = max(ctx.send_cursor, hi)
    out.append(TimerOp(rpc_key, "rtx", START, SENDER_TIMEOUT))


def sender_timeout(ev, ctxs, pad, out):
    ctx = ctxs.rpc
    rpc_key = ev.keys["rpc"]
    flow = rpc_key[:4]
    if ctx.done:
        return
    # no feedback since the last send: resend a window from the receiver's
    # last known contiguous offset
    lo = ctx.acked_cursor
    hi = min(max(ctx.granted, lo + ctx.smss), ctx.length, lo + ctx.unscheduled)
    _send_range(ctx, flow, rpc_key[4], lo, hi, out, retx=True)
    out.append(TimerOp(rpc_key, "rtx", START, SENDER_TIMEOUT))


# -- receiver ---------------------------------------------------------------------



def recv_data(ev, ctxs, pad, out):
    rpc_key = ev.keys["rpc"]
    flow = rpc_key[:4]
    msg_id = ev.meta["msg_id"]
    length = ev.meta["msg_len"]
    offset = ev.meta["offset"]
    data = ev.payload
    uid = msg_uid("rx", flow, msg_id)
    if not ctxs.has("rpc"):
        intervals = []
        added = _insert_interval(intervals, offset, offset + len(data))
        whole = added >= length
        out.append(NewCtx("rpc", rpc_key, {
            "role": "receiver",
            "length": length,
            "prio": ev.meta["prio"],
            "granted": min(length, ctxs.grants.unscheduled),
            "received": intervals,
            "completed": whole,
        }))
        out.append(NewOrderedData(RX, uid, length))
        out.append(AddRxSegment(uid, offset, data))
        pad.new_bytes = added
        pad.rpc_fresh = True
        if whole:
            # single-burst message: deliver and acknowledge immediately
            out.append(RxFlushAndNotify(uid, length, None))
            out.append(Notify(flow, {"what": "delivered", "msg_id": msg_id, "bytes": length}))
            out.append(_ctrl(flow, DONE, msg_id, length, length, length))
            pad.rpc_done_fresh = True
        else:
            out.append(_resend_timer(rpc_key))
        return
    ctx = ctxs.rpc
    if ctx.completed:
        # the sender missed our DONE; repeat it
        out.append(_ctrl(flow, DONE, msg_id, ctx.length, ctx.length, ctx.length))
        return
    added = _insert_interval(ctx.received, offset, offset + len(data))
    pad.new_bytes = added
    if added:
        out.append(AddRxSegment(uid, offset, data))
    out.append(_resend_timer(rpc_key))


def grant_ctrl(ev, ctxs, pad, out):
    """Group-level grant logic: completion first, then SRPT credit extension."""
    rpc_key = ev.keys["rpc"]
    flow = rpc_key[:4]
    msg_id = ev.meta["msg_id"]
    grants = ctxs.grants
    if pad.rpc_fresh:
        if not pad.rpc_done_fresh:
            grants.msgs = grants.msgs + [{
                "key": rpc_key, "length": ev.meta["msg_len"],
                "received": pad.new_bytes, "cursor": pad.new_bytes if ev.meta["offset"] == 0 else 0,
                "granted": min(ev.meta["msg_len"], grants.unscheduled),
            }]
    entry = next((m for m in grants.msgs if m["key"] == rpc_key), None)
    ctx = ctxs.rpc if ctxs.has("rpc") else None
    if entry is not None and not pad.rpc_fresh:
        entry["received"] += pad.new_bytes
        if ctx is not None:
            entry["cursor"] = _contig(ctx.received)
    if ctx is not None and not ctx.completed and _contig(ctx.received) >= ctx.length:
        ctx.completed = True
        out.append(RxFlushAndNotify(msg_uid("rx", flow, msg_id), ctx.length, None))
        out.append(Notify(flow, {"what": "delivered", "msg_id": msg_id, "bytes": ctx.length}))
        out.append(TimerOp(rpc_key, "resend", STOP))
        out.append(_ctrl(flow, DONE, msg_id, ctx.length, ctx.length, ctx.length))
        grants.msgs = [m for m in grants.msgs if m["key"] != rpc_key]
        return
    # SRPT: extend credit for the incomplete message with the fewest
    # remaining bytes, within the outstanding-grant budget
    candidates = [m for m in grants.msgs if m["granted"] < m["length"]]
    if not candidates:
        return
    best = min(candidates, key=lambda m: (m["length"] - m["received"], m["key"]))
    outstanding = sum(max(0, m["granted"] - m["received"]) for m in grants.msgs)
    room = grants.budget - outstanding
    extend = min(room, best["length"] - best["granted"])
    if extend <= 0:
        return
    best["granted"] += extend
    best_flow = best["key"][:4]
    out.append(PktGen(best_flow, _bp(best_flow, GRANT, best["key"][4], best["length"], 0,
                                     grant_offset=best["cursor"], grant_limit=best["granted"]),
                      queue=QueueRef("spq", 0), priority=0))


def recv_timeout(ev, ctxs, pad, out):
    ctx = ctxs.rpc
    rpc_key = ev.keys["rpc"]
    flow = rpc_key[:4]
    if ctx.completed or ctx.role != "receiver":
        return
    limit = ctx.granted
    if ctxs.has("grants"):
        entry = next((m for m in ctxs.grants.msgs if m["key"] == rpc_key), None)
        if entry is not None:
            limit = max(limit, entry["granted"])
    gap = _contig(ctx.received)
    out.append(PktGen(flow, _bp(flow, RESEND, rpc_key[4], ctx.length, 0,
                                offset=gap, grant_limit=limit),
                      queue=QueueRef("spq", 0), priority=0))
    out.append(_resend_timer(rpc_key))


# -- parser -----------------------------------------------------------------------

def parse_packet(transport, meta):
    values = HEADER.unpack(transport)
    payload = transport[HEADER.byte_size:]
    local, remote = meta["dst_addr"], meta["src_addr"]
    flow = (local, values["dst_port"], remote, values["src_port"])
    rpc = flow + (values["msg_id"],)
    common = {"msg_id": values["msg_id"], "msg_len": values["msg_len"],
              "offset": values["offset"], "grant_offset": values["grant_offset"],
              "grant_limit": values["grant_limit"], "prio": values["prio"]}
    if values["type"] == DATA:
        return [Event(NETWORK, "homa_data",
                      keys={"rpc": rpc, "grants": (local,)},
                      meta=common, payload=payload)]
    names = {GRANT: "homa_grant", RESEND: "homa_resend", DONE: "homa_done"}
    return [Event(NETWORK, names[values["type"]], keys={"rpc": rpc}, meta=common)]


# -- deploy ----------------------------------------------------------------------

def context_specs(mss, unscheduled, budget):
    grants = ContextSpec("grants", GROUP, 1, fields=(
        ("budget", "uint32", budget),
        ("unscheduled", "uint32", unscheduled),
        ("msgs", "list", []),
    ))
    rpc = ContextSpec("rpc", PER_FLOW, 5, fields=(
        ("role", "role", "sender"),
        ("length", "uint32", 0),
        ("smss", "uint32", mss),
        ("prio", "uint8", 7),
        ("granted", "uint32", 0),
        ("send_cursor", "uint32", 0),
        ("acked_cursor", "uint32", 0),
        ("unscheduled", "uint32", unscheduled),
        ("done", "bool", False),
        ("completed", "bool", False),
        ("received", "list", []),
    ), timers=(("rtx", "homa_sender_timeout"), ("resend", "homa_recv_timeout")))
    return (grants, rpc)


def build_deploy_spec(mss=1460, unscheduled=UNSCHEDULED, budget=GRANT_BUDGET):
    dispatch = DispatchTable({
        "homa_listen": ("listen_ep",),
        "homa_send": ("send_msg",),
        "homa_data": ("recv_data", "grant_ctrl"),
        "homa_grant": ("proc_grant",),
        "homa_done": ("proc_done",),
        "homa_resend": ("proc_resend",),
        "homa_sender_timeout": ("sender_timeout",),
        "homa_recv_timeout": ("recv_timeout",),
    })
    processors = {
        "listen_ep": listen_ep,
        "send_msg": send_msg,
        "recv_data": recv_data,
        "grant_ctrl": grant_ctrl,
        "proc_grant": proc_grant,
        "proc_done": proc_done,
        "proc_resend": proc_resend,
        "sender_timeout": sender_timeout,
        "recv_timeout": recv_timeout,
    }
    return DeploySpec(
        name="homa",
        dispatch=dispatch,
        processors=processors,
        ctx_specs=context_specs(mss, unscheduled, budget),
        parser=parse_packet,
        seg_rules={1: OFFSET_RULE},
        coalescing_rules=(CoalescingRule(match_fields=("type", "msg_id"),
                                         guard=BOTH_PAYLOAD_EMPTY, action=KEEP_NEWEST),),
        pkt_sched=SchedulerSpec(blocks=(BlockSpec("spq", STRICT_PRIORITY, PRIO_LEVELS),),
                                root="spq"),
        ev_sched=EventSchedSpec(),
        scratch={"new_bytes": 0, "rpc_fresh": False, "rpc_done_fresh": False},
        srule_refs=(1,),
    )


# -- simulator app driver -----------------------------------------------------------

class Driver:
    name = "homa"
    connect_oriented = False
    message_based = True

    def __init__(self, mss, rng, unscheduled=UNSCHEDULED, budget=GRANT_BUDGET):
        self.mss = mss
        self.unscheduled = unscheduled
        self.budget = budget

    def listen_key(self, flow):
        return (flow.dst, flow.dst_addr)

    def listen_events(self, flow):
        return [Event(APPLICATION, "homa_listen",
                      keys={"grants": (flow.dst_addr,)},
                      meta={"budget": self.budget, "unscheduled": self.unscheduled})]

    def connect_event(self, flow):
        return None

    def send_event(self, flow, host, stream, data):
        key = flow.client_key if host == flow.src else flow.server_key
        return Event(APPLICATION, "homa_send",
                     keys={"rpc": key + (stream,)},
                     meta={"msg_id": stream, "data": data, "mss": self.mss,
                           "unscheduled": self.unscheduled})

    def recv_event(self, flow, host, want, addr):
        return None  # message-based: delivery happens on completion

    def on_notify(self, flow, host, payload):
        return []
