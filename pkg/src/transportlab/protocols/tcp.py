"""TCP-lite: a window-based reliable bytestream program.

Slow start / congestion avoidance, fast retransmit on the third duplicate
ack, limited transmit on the first two, and exponential RTO backoff.  The
handshake is a simplified two-message SYN / SYN-ACK exchange; option fields
(mss, wscale, sack-permitted, timestamps) are declared in the header but
never negotiated on.
"""

from ..chain import DispatchTable
from ..context import GROUP, PER_FLOW, ContextSpec
from ..events import APPLICATION, NETWORK, Event
from ..headers import HeaderLayout
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
from ..scheduler import default_fifo_spec
from ..seqnum import SEQ_MOD, seq_add, seq_ge, seq_gt, seq_le, seq_lt, seq_sub
from ..window import DEFAULT_CAPACITY

FIN, SYN, RST, PSH, ACK = 1, 2, 4, 8, 16

ONE_SEC = 1_000_000_000
MIN_RTO = 200_000_000      # sim floor, 200 ms
MAX_RTO = 60 * ONE_SEC
RWND = 65535
INF_SSTHRESH = (1 << 30)

HEADER = HeaderLayout("tcp_lite", [
    ("src_port", 16), ("dst_port", 16),
    ("seq_no", 32), ("ack_seq", 32),
    ("data_offset", 4), ("reserved", 4), ("flags", 8),
    ("rwnd_size", 16), ("checksum", 16), ("urg_ptr", 16),
    ("opt_mss", 16), ("opt_wscale", 8), ("opt_sack_permit", 8),
    ("opt_ts_val", 32), ("opt_ts_ecr", 32),
])

SEQ_RULE = SegRule(1, (FieldRule("seq_no", "bp.hdr.seq_no",
                                 "prev.hdr.seq_no + prev.payload_len",
                                 "prev.hdr.seq_no + prev.payload_len"),))


def tx_uid(flow):
    return ("tx", flow, 0)


def rx_uid(flow):
    return ("rx", flow, 0)


def _bp(flow, flags, seq, ack, rwnd, payload=None, mss_opt=0):
    values = {
        "src_port": flow[1], "dst_port": flow[3],
        "seq_no": seq % SEQ_MOD, "ack_seq": ack % SEQ_MOD,
        "data_offset": HEADER.byte_size // 4, "reserved": 0, "flags": flags,
        "rwnd_size": rwnd, "checksum": Computed(), "urg_ptr": 0,
        "opt_mss": mss_opt, "opt_wscale": 0, "opt_sack_permit": 0,
        "opt_ts_val": 0, "opt_ts_ecr": 0,
    }
    return Blueprint(HEADER, values, payload)


def _server_isn(salt, key):
    mixed = salt
    for part in key:
        mixed = (mixed * 1_000_003 + part) % SEQ_MOD
    return mixed


# -- event processors ---------------------------------------------------------

def listen_ep(ev, ctxs, pad, out):
    out.append(NewCtx("listen", ev.keys["listen"], {
        "isn_salt": ev.meta["isn_salt"],
        "smss": ev.meta["mss"],
    }))


def connect_ep(ev, ctxs, pad, out):
    flow = ev.keys["conn"]
    isn = ev.meta["init_seq"]
    mss = ev.meta["mss"]
    out.append(NewCtx("conn", flow, {
        "state": "SYN_SENT",
        "smss": mss,
        "init_seq": isn,
        "send_una": isn,
        "send_next": seq_add(isn, 1),
        "data_end": seq_add(isn, 1),
        "cwnd_size": 3 * mss,
    }))
    out.append(PktGen(flow, _bp(flow, SYN, isn, 0, RWND, mss_opt=mss)))
    out.append(TimerOp(flow, "ack_timeout", START, ONE_SEC))


def syn_ep(ev, ctxs, pad, out):
    flow = ev.keys["conn"]
    listen = ctxs.listen
    if ctxs.has("conn"):
        # duplicate SYN: our SYN-ACK was probably lost, answer it again
        ctx = ctxs.conn
        out.append(PktGen(flow, _bp(flow, SYN | ACK, ctx.init_seq,
                                    seq_add(ctx.recv_init_seq, 0), RWND, mss_opt=ctx.smss)))
        return
    peer_isn = ev.meta["remote_seq"]
    isn = _server_isn(listen.isn_salt, flow)
    first_byte = seq_add(peer_isn, 1)
    out.append(NewCtx("conn", flow, {
        "state": "ESTABLISHED",
        "smss": listen.smss,
        "init_seq": isn,
        "send_una": seq_add(isn, 1),
        "send_next": seq_add(isn, 1),
        "data_end": seq_add(isn, 1),
        "cwnd_size": 3 * listen.smss,
        "recv_init_seq": first_byte,
        "recv_next": first_byte,
        "last_rwnd_size": ev.meta["rwnd_size"],
        "meta_rwnd": first_byte,
    }))
    out.append(PktGen(flow, _bp(flow, SYN | ACK, isn, first_byte, RWND, mss_opt=listen.smss)))
    out.append(Notify(flow, {"what": "accepted"}))
    listen.accepted = listen.accepted + 1


def synack_ep(ev, ctxs, pad, out):
    ctx = ctxs.conn
    flow = ev.keys["conn"]
    if ctx.state != "SYN_SENT":
        return
    first_byte = seq_add(ev.meta["remote_seq"], 1)
    ctx.state = "ESTABLISHED"
    ctx.send_una = ev.meta["ack_seq"]
    ctx.recv_init_seq = first_byte
    ctx.recv_next = first_byte
    ctx.meta_rwnd.reset(first_byte)
    ctx.last_rwnd_size = ev.meta["rwnd_size"]
    out.append(TimerOp(flow, "ack_timeout", STOP))
    ctx.timer_running = False
    out.append(Notify(flow, {"what": "connected"}))


def record_data(ev, ctxs, pad, out):
    ctx = ctxs.conn
    flow = ev.keys["conn"]
    data = ev.meta["data"]
    if ctx.first_send_req:
        out.append(NewOrderedData(TX, tx_uid(flow), None))
        ctx.first_send_req = False
    out.append(AddTxData(tx_uid(flow), data))
    ctx.data_end = seq_add(ctx.data_end, len(data))


def gen_seg(ev, ctxs, pad, out):
    if pad.skip_ack_eps:
        return
    ctx = ctxs.conn
    if ctx.state != "ESTABLISHED":
        return
    flow = ev.keys["conn"]
    data_rest = seq_sub(ctx.data_end, ctx.send_next)
    effective_window = min(ctx.cwnd_size, ctx.last_rwnd_size)
    limit = seq_add(ctx.send_una, effective_window)
    if seq_lt(limit, ctx.send_next):
        return
    window_avail = seq_sub(limit, ctx.send_next)
    bytes_to_send = min(data_rest, window_avail)
    if bytes_to_send <= 0:
        return
    offset = seq_sub(ctx.send_next, seq_add(ctx.init_seq, 1))
    payload = DataPayload(tx_uid(flow), offset, bytes_to_send, ctx.smss)
    out.append(PktGen(flow, _bp(flow, ACK | PSH, ctx.send_next, ctx.recv_next, RWND, payload),
                      srule_id=1))
    if not ctx.rtt_tracking:
        ctx.rtt_tracking = True
        ctx.rtt_seq = seq_add(ctx.send_next, bytes_to_send)
        ctx.rtt_sent_at = ev.time
    ctx.send_next = seq_add(ctx.send_next, bytes_to_send)
    if not ctx.timer_running:
        out.append(TimerOp(flow, "ack_timeout", START, ctx.rto))
        ctx.timer_running = True


def rto(ev, ctxs, pad, out):
    ctx = ctxs.conn
    ack = ev.meta["ack_seq"]
    if not (seq_le(ctx.send_una, ack) and seq_le(ack, ctx.send_next)):
        pad.skip_ack_eps = True
        return
    if ctx.rtt_tracking and seq_ge(ack, ctx.rtt_seq):
        sample = ev.time - ctx.rtt_sent_at
        if ctx.first_rto:
            ctx.srtt = sample
            ctx.rttvar = sample // 2
            ctx.first_rto = False
        else:
            ctx.rttvar = (3 * ctx.rttvar + abs(ctx.srtt - sample)) // 4
            ctx.srtt = (7 * ctx.srtt + sample) // 8
        ctx.rto_est = max(MIN_RTO, min(MAX_RTO, ctx.srtt + max(1_000_000, 4 * ctx.rttvar)))
        ctx.rto = ctx.rto_est
        ctx.rtt_tracking = False


def cong_ctrl(ev, ctxs, pad, out):
    if pad.skip_ack_eps:
        return
    ctx = ctxs.conn
    flow = ev.keys["conn"]
    ack = ev.meta["ack_seq"]
    ctx.last_rwnd_size = ev.meta["rwnd_size"]
    if seq_gt(ack, ctx.send_una):
        pad.new_ack = True
        flushed = seq_sub(ack, ctx.send_una)
        acked_data = min(flushed, seq_sub(ctx.data_end, ctx.send_una))
        if acked_data > 0 and not ctx.first_send_req:
            out.append(TxFlush(tx_uid(flow), acked_data))
        ctx.send_una = ack
        if ctx.cwnd_size < ctx.ssthresh:
            ctx.cwnd_size += ctx.smss
        else:
            ctx.cwnd_size += max(1, ctx.smss * ctx.smss // ctx.cwnd_size)
        ctx.duplicate_acks = 0
        ctx.rto = ctx.rto_est  # window advanced: timeout backoff resets
        if ctx.send_una == ctx.send_next:
            out.append(TimerOp(flow, "ack_timeout", STOP))
            ctx.timer_running = False
        else:
            out.append(TimerOp(flow, "ack_timeout", START, ctx.rto))
            ctx.timer_running = True
    ctx.last_ack = ack


def _retransmit_una(ctx, flow, out):
    flight = seq_sub(ctx.send_next, ctx.send_una)
    length = min(ctx.smss, flight)
    if length <= 0:
        return
    offset = seq_sub(ctx.send_una, seq_add(ctx.init_seq, 1))
    payload = DataPayload(tx_uid(flow), offset, length, ctx.smss)
    out.append(PktGen(flow, _bp(flow, ACK | PSH, ctx.send_una, ctx.recv_next, RWND, payload),
                      srule_id=1, tags=("retx",)))
    ctx.rtt_tracking = False


def make_fast_retransmit(buggy):
    def fast_retransmit(ev, ctxs, pad, out):
        if pad.skip_ack_eps or pad.new_ack:
            return
        ctx = ctxs.conn
        flow = ev.keys["conn"]
        if ctx.send_una == ctx.send_next:
            return  # nothing outstanding: not a duplicate that matters
        ctx.duplicate_acks += 1
        if ctx.duplicate_acks == 3:
            flight = seq_sub(ctx.send_next, ctx.send_una)
            ctx.ssthresh = max(flight // 2, 2 * ctx.smss)
            _retransmit_una(ctx, flow, out)
            ctx.cwnd_size = ctx.ssthresh + 3 * ctx.smss
        elif ctx.duplicate_acks < 3:
            # limited transmit: one new segment, only if unsent data exists
            data_rest = seq_sub(ctx.data_end, ctx.send_next)
            if buggy or data_rest > 0:
                length = min(ctx.smss, data_rest)
                offset = seq_sub(ctx.send_next, seq_add(ctx.init_seq, 1))
                payload = DataPayload(tx_uid(flow), offset, length, ctx.smss)
                out.append(PktGen(flow, _bp(flow, ACK | PSH, ctx.send_next, ctx.recv_next,
                                            RWND, payload), srule_id=1))
                ctx.send_next = seq_add(ctx.send_next, length)
        else:
            ctx.cwnd_size += ctx.smss
    return fast_retransmit


def proc_timeout(ev, ctxs, pad, out):
    ctx = ctxs.conn
    flow = ev.keys["conn"]
    if ctx.state == "SYN_SENT":
        ctx.rto = min(ctx.rto * 2, MAX_RTO)
        out.append(PktGen(flow, _bp(flow, SYN, ctx.init_seq, 0, RWND, mss_opt=ctx.smss),
                          tags=("retx",)))
        out.append(TimerOp(flow, "ack_timeout", START, ctx.rto))
        return
    if ctx.send_una == ctx.send_next:
        ctx.timer_running = False
        return
    flight = seq_sub(ctx.send_next, ctx.send_una)
    ctx.ssthresh = max(flight // 2, 2 * ctx.smss)
    ctx.cwnd_size = ctx.smss
    ctx.rto = min(ctx.rto * 2, MAX_RTO)
    ctx.duplicate_acks = 0
    _retransmit_una(ctx, flow, out)
    out.append(TimerOp(flow, "ack_timeout", START, ctx.rto))
    ctx.timer_running = True


def proc_recv(ev, ctxs, pad, out):
    ctx = ctxs.conn
    flow = ev.keys["conn"]
    seq = ev.meta["seq_num"]
    length = ev.meta["data_len"]
    if ctx.first_data_rcvd:
        out.append(NewOrderedData(RX, rx_uid(flow), None))
        ctx.first_data_rcvd = False
    end = seq_add(seq, length)
    win_end = seq_add(ctx.recv_next, ctx.rwnd_size)
    if (ctx.rwnd_size == 0 and length > 0) or seq_gt(seq, win_end) or seq_lt(end, ctx.recv_next):
        pad.in_window = False
        return
    if seq_gt(end, win_end):
        end = win_end
    data = ev.payload[:seq_sub(end, seq)]
    if not data:
        pad.in_window = False
        return
    ctx.meta_rwnd.mark(seq, end, True)
    ctx.meta_rwnd.slide()
    ctx.recv_next = ctx.meta_rwnd.head
    out.append(AddRxSegment(rx_uid(flow), seq_sub(seq, ctx.recv_init_seq), data))


def flush_data(ev, ctxs, pad, out):
    ctx = ctxs.conn
    flow = ev.keys["conn"]
    if ev.type_name == "tcp_recv":
        ctx.pending_recv += ev.meta["want"]
        ctx.pending_addr = ev.meta.get("addr")
    if ctx.first_data_rcvd or ctx.pending_recv <= 0:
        return
    contig = seq_sub(ctx.recv_next, ctx.recv_init_seq)
    ready = contig - ctx.last_flushed
    n = min(ready, ctx.pending_recv)
    if n <= 0:
        return
    out.append(RxFlushAndNotify(rx_uid(flow), n, ctx.pending_addr))
    ctx.last_flushed += n
    ctx.pending_recv -= n


def send_ack(ev, ctxs, pad, out):
    ctx = ctxs.conn
    flow = ev.keys["conn"]
    out.append(PktGen(flow, _bp(flow, ACK, ctx.send_next, ctx.recv_next, RWND)))


# -- parser --------------------------------------------------------------------

def parse_packet(transport, meta):
    values = HEADER.unpack(transport)
    payload = transport[HEADER.byte_size:]
    flags = values["flags"]
    local, remote = meta["dst_addr"], meta["src_addr"]
    conn_key = (local, values["dst_port"], remote, values["src_port"])
    events = []
    if flags & SYN and not flags & ACK:
        events.append(Event(NETWORK, "tcp_syn",
                            keys={"listen": (local, values["dst_port"]), "conn": conn_key},
                            meta={"remote_seq": values["seq_no"],
                                  "rwnd_size": values["rwnd_size"],
                                  "mss": values["opt_mss"]}))
        return events
    if flags & SYN and flags & ACK:
        events.append(Event(NETWORK, "tcp_synack",
                            keys={"conn": conn_key},
                            meta={"remote_seq": values["seq_no"],
                                  "ack_seq": values["ack_seq"],
                                  "rwnd_size": values["rwnd_size"],
                                  "mss": values["opt_mss"]}))
        return events
    if payload:
        events.append(Event(NETWORK, "tcp_data_pkt",
                            keys={"conn": conn_key},
                            meta={"seq_num": values["seq_no"], "data_len": len(payload)},
                            payload=payload))
    if flags & ACK:
        events.append(Event(NETWORK, "tcp_ack",
                            keys={"conn": conn_key},
                            meta={"ack_seq": values["ack_seq"],
                                  "rwnd_size": values["rwnd_size"],
                                  "seq": values["seq_no"]}))
    return events


# -- deploy ---------------------------------------------------------------------

def context_specs(mss):
    listen = ContextSpec("listen", GROUP, 2, fields=(
        ("isn_salt", "uint32", 0),
        ("smss", "uint32", mss),
        ("accepted", "uint32", 0),
    ))
    conn = ContextSpec("conn", PER_FLOW, 4, fields=(
        ("state", "state", "CLOSED"),
        ("smss", "uint32", mss),
        ("init_seq", "seq", 0),
        ("send_una", "seq", 0),
        ("send_next", "seq", 0),
        ("data_end", "seq", 0),
        ("cwnd_size", "uint32", 3 * mss),
        ("ssthresh", "uint32", INF_SSTHRESH),
        ("duplicate_acks", "uint8", 0),
        ("last_ack", "seq", 0),
        ("rto", "ns", ONE_SEC),
        ("rto_est", "ns", ONE_SEC),
        ("srtt", "ns", 0),
        ("rttvar", "ns", 0),
        ("first_rto", "bool", True),
        ("rtt_tracking", "bool", False),
        ("rtt_seq", "seq", 0),
        ("rtt_sent_at", "ns", 0),
        ("timer_running", "bool", False),
        ("last_rwnd_size", "uint32", RWND),
        ("recv_init_seq", "seq", 0),
        ("recv_next", "seq", 0),
        ("rwnd_size", "uint32", RWND),
        ("last_flushed", "uint64", 0),
        ("pending_recv", "uint64", 0),
        ("pending_addr", "addr", None),
        ("first_send_req", "bool", True),
        ("first_data_rcvd", "bool", True),
    ), timers=(("ack_timeout", "tcp_timeout"),),
       windows=(("meta_rwnd", DEFAULT_CAPACITY),))
    return (listen, conn)


def build_deploy_spec(mss=1460, fast_retransmit_bug=False):
    dispatch = DispatchTable({
        "tcp_listen": ("listen_ep",),
        "tcp_connect": ("connect_ep",),
        "tcp_syn": ("syn_ep",),
        "tcp_synack": ("synack_ep", "gen_seg"),
        "tcp_send": ("record_data", "gen_seg"),
        "tcp_recv": ("flush_data",),
        "tcp_ack": ("rto", "cong_ctrl", "fast_retransmit", "gen_seg"),
        "tcp_data_pkt": ("proc_recv", "flush_data", "send_ack"),
        "tcp_timeout": ("proc_timeout",),
    })
    processors = {
        "listen_ep": listen_ep,
        "connect_ep": connect_ep,
        "syn_ep": syn_ep,
        "synack_ep": synack_ep,
        "record_data": record_data,
        "gen_seg": gen_seg,
        "rto": rto,
        "cong_ctrl": cong_ctrl,
        "fast_retransmit": make_fast_retransmit(fast_retransmit_bug),
        "proc_timeout": proc_timeout,
        "proc_recv": proc_recv,
        "flush_data": flush_data,
        "send_ack": send_ack,
    }
    return DeploySpec(
        name="tcp",
        dispatch=dispatch,
        processors=processors,
        ctx_specs=context_specs(mss),
        parser=parse_packet,
        seg_rules={1: SEQ_RULE},
        coalescing_rules=(CoalescingRule(match_fields=("flags",), guard=BOTH_PAYLOAD_EMPTY,
                                         action=KEEP_NEWEST),),
        pkt_sched=default_fifo_spec(),
        ev_sched=EventSchedSpec(),
        scratch={"skip_ack_eps": False, "new_ack": False, "in_window": True},
        srule_refs=(1,),
    )


# -- simulator app driver --------------------------------------------------------

RECV_ALL = 1 << 62


class Driver:
    name = "tcp"
    connect_oriented = True
    message_based = False

    def __init__(self, mss, rng, **_params):
        self.mss = mss
        self.rng = rng

    def listen_key(self, flow):
        return (flow.dst, flow.dst_addr, flow.dst_port)

    def listen_events(self, flow):
        return [Event(APPLICATION, "tcp_listen",
                      keys={"listen": (flow.dst_addr, flow.dst_port)},
                      meta={"isn_salt": self.rng.getrandbits(32), "mss": self.mss})]

    def connect_event(self, flow):
        return Event(APPLICATION, "tcp_connect",
                     keys={"conn": flow.client_key},
                     meta={"init_seq": self.rng.getrandbits(32), "mss": self.mss})

    def send_event(self, flow, host, stream, data):
        key = flow.client_key if host == flow.src else flow.server_key
        return Event(APPLICATION, "tcp_send", keys={"conn": key}, meta={"data": data})

    def recv_event(self, flow, host, want, addr):
        key = flow.client_key if host == flow.src else flow.server_key
        return Event(APPLICATION, "tcp_recv", keys={"conn": key},
                     meta={"want": want, "addr": addr})

    def on_notify(self, flow, host, payload):
        if payload.get("what") == "accepted" and flow.auto_recv:
            return [self.recv_event(flow, host, RECV_ALL, ("appbuf", flow.flow_id))]
        return []
