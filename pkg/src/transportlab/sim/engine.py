"""The deterministic simulated target.

A single-threaded discrete-event loop: pop the earliest pending occurrence
(packet arrival, timer expiry, application event; ties broken network before
timer before application, then insertion order), parse packets into events,
resolve contexts, dispatch the chain, execute the returned instructions, and
drain per-host schedulers onto links with serialization and propagation
delays.  Everything random flows from the scenario seed.
"""

import hashlib
import heapq
import math
import random
from dataclasses import dataclass, field

from ..chain import dispatch
from ..context import GLOBAL, ContextBundle
from ..errors import (
    ChainError,
    DuplicateContext,
    MissingContext,
    RuntimeFault,
    UndeclaredTimer,
    UnknownContext,
    UnknownFlow,
)
from ..events import TIMER, Event
from ..instructions import (
    AddRxSegment,
    AddTxData,
    DelCtx,
    NewCtx,
    NewOrderedData,
    Notify,
    PktGen,
    RxFlushAndNotify,
    SetQueueParam,
    TimerOp,
    TxFlush,
)
from ..packetgen import PendingPacket, PendingRings, WirePacket, lookup_srule, segment, serialize_transport
from ..protocols import protocol_module
from ..reassembly import DataUnitStore
from ..registry import register_deploy
from ..scheduler import Scheduler
from ..timers import TimerHub
from .metrics import MessageTracker, message_records
from .scenario import Scenario, ScriptEntry
from .trace import TraceLog

RANK_NETWORK, RANK_TIMER, RANK_APP, RANK_DRAIN = 0, 1, 2, 3


def _derive_seed(seed, label):
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _payload_pattern(flow_id, stream):
    base = bytes(range(256))
    rot = (flow_id * 37 + stream * 11) % 256
    return base[rot:] + base[:rot]


def synth_payload(flow_id, stream, offset, n):
    """Deterministic position-dependent bytes for scripted sends."""
    pattern = _payload_pattern(flow_id, stream)
    k = offset % 256
    tiled = pattern * (n // 256 + 2)
    return tiled[k:k + n]


class HostRuntime:
    def __init__(self, spec, handle, mss):
        self.spec = spec
        self.handle = handle
        self.contexts = {}  # (spec name, key tuple) -> Context
        self.units = DataUnitStore()
        self.timers = TimerHub()
        self.rings = PendingRings(handle.coalescing_rules)
        self.sched = Scheduler(handle.pkt_sched, mss)
        self.egress_free_at = 0


@dataclass
class SimResult:
    trace: TraceLog
    messages: list
    counters: dict
    deliveries: dict
    sent: dict
    notifications: list
    completed_all: bool
    end_time: int
    context_snapshots: dict = field(default_factory=dict)

    def delivered(self, flow_id, stream=0):
        return bytes(self.deliveries.get((flow_id, stream), b""))

    def sent_bytes(self, flow_id, stream=0):
        return bytes(self.sent.get((flow_id, stream), b""))


class Engine:
    def __init__(self, scenario: Scenario, compute_slowdown=True):
        self.scenario = scenario
        self.compute_slowdown = compute_slowdown
        self.trace = TraceLog(scenario.trace_level)
        self.now = 0
        self._heap = []
        self._seq = 0
        self.rng_net = random.Random(_derive_seed(scenario.seed, "net"))
        self.rng_app = random.Random(_derive_seed(scenario.seed, "app"))
        self.tracker = MessageTracker()
        self.counters = {"pkts_tx": 0, "pkts_rx": 0, "pkts_dropped": 0,
                         "retransmissions": 0, "sent_bytes": 0, "delivered_bytes": 0,
                         "chain_errors": 0}
        self.link_counts = {}
        self.deliveries = {}
        self.sent = {}
        self.notifications = []
        self.in_flight = 0

        self.hosts = {}
        self.drivers = {}
        self.addr_to_host = {}
        for h in scenario.hosts:
            module = protocol_module(h.protocol)
            params = dict(h.params)
            handle = register_deploy(module.build_deploy_spec(mss=scenario.mss, **params))
            self.hosts[h.host_id] = HostRuntime(h, handle, scenario.mss)
            self.drivers[h.host_id] = module.Driver(scenario.mss, self.rng_app, **params)
            self.addr_to_host[h.addr] = h.host_id
        self.links = {}
        for l in scenario.links:
            self.links[(l.a, l.b)] = l
            self.links[(l.b, l.a)] = l
        self.flow_by_id = {f.flow_id: f for f in scenario.flows}
        self.flow_by_key = {}
        for f in scenario.flows:
            self.flow_by_key[f.client_key] = f
            self.flow_by_key[f.server_key] = f

        self._connected = set()    # flow ids with a completed handshake
        self._waiting = {}         # flow id -> [(host, Event)] gated on connect
        self._listened = set()
        self._send_cursor = {}     # (flow id, stream) -> appended byte count
        self._msg_counter = {}     # flow id -> next auto message id
        self._connect_pushed = set()

        self._seed_listeners()
        self._seed_script()

    # -- event plumbing ---------------------------------------------------

    def _push(self, t, rank, kind, data):
        heapq.heappush(self._heap, (t, rank, self._seq, kind, data))
        self._seq += 1

    def _seed_listeners(self):
        for f in self.scenario.flows:
            driver = self.drivers[f.dst]
            key = driver.listen_key(f)
            if key is not None and key in self._listened:
                continue
            if key is not None:
                self._listened.add(key)
            for ev in driver.listen_events(f):
                self._push(0, RANK_APP, "app", (f.dst, ev, None))

    def _auto_stream(self, flow_id):
        nxt = self._msg_counter.get(flow_id, 1)
        self._msg_counter[flow_id] = nxt + 1
        return nxt

    def _seed_script(self):
        for entry in self.scenario.script:
            if entry.action == "send":
                self._seed_send(entry)
            else:
                flow = self.flow_by_id[entry.flow]
                driver = self.drivers[entry.host]
                ev = driver.recv_event(flow, entry.host, entry.nbytes, ("appbuf", entry.flow))
                if ev is not None:
                    self._push(entry.time, RANK_APP, "app", (entry.host, ev, None))

    def _seed_send(self, entry: ScriptEntry):
        flow = self.flow_by_id[entry.flow]
        driver = self.drivers[entry.host]
        stream = self._auto_stream(entry.flow) if driver.message_based else entry.stream
        cursor = self._send_cursor.get((entry.flow, stream), 0)
        data = synth_payload(entry.flow, stream, cursor, entry.nbytes)
        self._send_cursor[(entry.flow, stream)] = cursor + entry.nbytes
        self._register_send(entry.time, entry.host, flow, stream, cursor, data)

    def _register_send(self, t, host, flow, stream, cursor, data):
        self.tracker.add(flow.flow_id, stream, cursor, len(data), t)
        self.sent.setdefault((flow.flow_id, stream), bytearray()).extend(data)
        self.counters["sent_bytes"] += len(data)
        driver = self.drivers[host]
        ev = driver.send_event(flow, host, stream, data)
        gated = driver.connect_oriented
        if gated and flow.flow_id not in self._connect_pushed:
            self._connect_pushed.add(flow.flow_id)
            connect = driver.connect_event(flow)
            if connect is not None:
                self._push(t, RANK_APP, "app", (flow.src, connect, None))
            else:
                gated = False
        self._push(t, RANK_APP, "app", (host, ev, flow.flow_id if gated else None))

    # -- public application ops --------------------------------------------

    def app_send(self, host, flow_id, data=None, nbytes=None, stream=0, at=0):
        flow = self.flow_by_id.get(flow_id)
        if flow is None or host not in (flow.src, flow.dst):
            raise UnknownFlow(f"flow {flow_id} is not configured on host {host}")
        driver = self.drivers[host]
        if driver.message_based:
            stream = self._auto_stream(flow_id)
        cursor = self._send_cursor.get((flow_id, stream), 0)
        if data is None:
            data = synth_payload(flow_id, stream, cursor, nbytes)
        self._send_cursor[(flow_id, stream)] = cursor + len(data)
        self._register_send(at, host, flow, stream, cursor, data)

    def app_recv(self, host, flow_id, want, addr=None, at=0):
        flow = self.flow_by_id.get(flow_id)
        if flow is None or host not in (flow.src, flow.dst):
            raise UnknownFlow(f"flow {flow_id} is not configured on host {host}")
        ev = self.drivers[host].recv_event(flow, host, want, addr)
        if ev is not None:
            self._push(at, RANK_APP, "app", (host, ev, None))

    # -- the run loop --------------------------------------------------------

    def run(self):
        duration = self.scenario.duration_ns
        while self._heap:
            t, rank, _, kind, data = heapq.heappop(self._heap)
            if t > duration:
                break
            if self._can_stop():
                break
            self.now = t
            if kind == "arrival":
                self._on_arrival(*data)
            elif kind == "app":
                host, ev, gate_flow = data
                if gate_flow is not None and gate_flow not in self._connected:
                    self._waiting.setdefault(gate_flow, []).append((host, ev))
                    continue
                self._process_event(host, ev)
                self._drain(host)
            elif kind == "timer":
                self._on_timer_check(data)
            elif kind == "drain":
                self._drain(data)
        self.now = min(self.now, duration)
        slowdowns = None
        if self.compute_slowdown:
            slowdowns = self._calibrate_slowdowns()
        records = message_records(self.tracker, slowdowns)
        snapshots = {}
        for hid, rt in self.hosts.items():
            snapshots[hid] = {f"{name}:{key}": ctx.snapshot()
                              for (name, key), ctx in sorted(rt.contexts.items(),
                                                             key=lambda kv: repr(kv[0]))}
        return SimResult(
            trace=self.trace,
            messages=records,
            counters=dict(self.counters, links=dict(self.link_counts)),
            deliveries=self.deliveries,
            sent=self.sent,
            notifications=self.notifications,
            completed_all=self.tracker.all_complete() and bool(self.tracker.messages),
            end_time=self.now,
            context_snapshots=snapshots,
        )

    def _can_stop(self):
        if not self.tracker.messages or not self.tracker.all_complete():
            return False
        if self.in_flight:
            return False
        for rt in self.hosts.values():
            if len(rt.rings) or rt.sched.pending():
                return False
        return True

    # -- occurrence handlers ----------------------------------------------------

    def _on_arrival(self, host, raw):
        pkt = WirePacket.from_bytes(raw)
        self.in_flight -= 1
        rt = self.hosts[host]
        self.counters["pkts_rx"] += 1
        self._link_count(pkt.src_host, host, "rx")
        self.trace.add(self.now, host, "rx", src=pkt.src_host, length=pkt.wire_len)
        meta = {"src_addr": pkt.src_addr, "dst_addr": pkt.dst_addr,
                "src_host": pkt.src_host, "dst_host": pkt.dst_host}
        if rt.handle.parser is None:
            return
        try:
            events = rt.handle.parser(pkt.transport, meta)
        except Exception as exc:
            self.trace.add(self.now, host, "error", where="parser", what=repr(exc))
            return
        for ev in events:
            self._process_event(host, ev)
        self._drain(host)

    def _on_timer_check(self, host):
        rt = self.hosts[host]
        for _deadline, flow, tid, keys in rt.timers.advance(self.now):
            spec_name, ev_type = rt.handle.timer_map[tid]
            ev = Event(TIMER, ev_type, keys=keys or {spec_name: flow}, meta={"tid": tid})
            self._process_event(host, ev)
        self._drain(host)

    def _process_event(self, host, ev):
        rt = self.hosts[host]
        ev.time = self.now
        self.trace.add(self.now, host, "event", type=ev.type_name, keys=ev.keys)
        resolved = {}
        for spec in rt.handle.ctx_specs.values():
            key = () if spec.granularity == GLOBAL else ev.keys.get(spec.name)
            if key is None:
                continue
            resolved[spec.name] = rt.contexts.get((spec.name, tuple(key)))
        bundle = ContextBundle(resolved)
        try:
            instructions = dispatch(rt.handle, ev, bundle)
        except (ChainError, RuntimeFault) as exc:
            self.counters["chain_errors"] += 1
            self.trace.add(self.now, host, "error", where=ev.type_name, what=repr(exc))
            return
        for instr in instructions:
            try:
                self._execute(rt, host, instr)
            except RuntimeFault as exc:
                self.counters["chain_errors"] += 1
                self.trace.add(self.now, host, "error", where=instr.kind, what=repr(exc))
                break

    # -- instruction execution -----------------------------------------------------

    def _execute(self, rt, host, instr):
        self.trace.add(self.now, host, "instr", op=instr.kind, **_instr_fields(instr))
        if isinstance(instr, NewOrderedData):
            rt.units.create(instr.direction, instr.uid, instr.size, instr.addr)
        elif isinstance(instr, AddRxSegment):
            rt.units.add_rx_segment(instr.uid, instr.offset, instr.data)
        elif isinstance(instr, RxFlushAndNotify):
            data = rt.units.rx_flush(instr.uid, instr.length)
            if instr.length > 0:
                self._on_delivery(host, instr, data)
        elif isinstance(instr, AddTxData):
            rt.units.add_tx_data(instr.uid, instr.data)
        elif isinstance(instr, TxFlush):
            rt.units.tx_flush(instr.uid, instr.length)
        elif isinstance(instr, PktGen):
            lookup_srule(rt.handle.seg_rules, instr.srule_id)  # fail fast
            rt.rings.push(instr.flow, PendingPacket(instr.blueprint, instr.srule_id,
                                                    instr.queue, instr.priority, instr.tags))
            if "retx" in instr.tags:
                self.counters["retransmissions"] += 1
        elif isinstance(instr, SetQueueParam):
            rt.sched.set_queue_param(instr.queue, instr.param, instr.value)
        elif isinstance(instr, TimerOp):
            if instr.tid not in rt.handle.timer_map:
                raise UndeclaredTimer(f"timer {instr.tid!r} not declared in any context spec")
            if instr.op == "stop":
                rt.timers.stop(instr.flow, instr.tid)
            else:
                rt.timers.start(instr.flow, instr.tid, self.now, instr.duration, instr.keys)
                self._push(self.now + instr.duration, RANK_TIMER, "timer", host)
        elif isinstance(instr, NewCtx):
            key = (instr.spec_name, tuple(instr.key))
            if key in rt.contexts:
                raise DuplicateContext(f"context {key} already live")
            spec = rt.handle.ctx_specs[instr.spec_name]
            rt.contexts[key] = spec.instantiate(instr.init)
        elif isinstance(instr, DelCtx):
            key = (instr.spec_name, tuple(instr.key))
            if key not in rt.contexts:
                raise UnknownContext(f"context {key} not live")
            del rt.contexts[key]
        elif isinstance(instr, Notify):
            self._on_notify(host, instr)
        else:
            raise RuntimeFault(f"unknown instruction {instr!r}")

    def _on_delivery(self, host, instr, data):
        direction, flow_key, stream = instr.uid
        self.counters["delivered_bytes"] += len(data)
        record = {"flow": flow_key, "uid": instr.uid, "len": len(data), "addr": instr.addr}
        self.notifications.append(record)
        self.trace.add(self.now, host, "app", what="data", flow=flow_key,
                       uid=instr.uid, length=len(data), addr=instr.addr)
        flow = self.flow_by_key.get(tuple(flow_key))
        if flow is None:
            return
        buf = self.deliveries.setdefault((flow.flow_id, stream), bytearray())
        buf.extend(data)
        self.tracker.on_delivered(flow.flow_id, stream, len(buf), self.now)

    def _on_notify(self, host, instr):
        payload = dict(instr.payload)
        self.notifications.append({"flow": instr.flow, "msg": payload})
        self.trace.add(self.now, host, "app", what="notify", flow=instr.flow, msg=payload)
        flow = self.flow_by_key.get(tuple(instr.flow))
        if flow is None:
            return
        if payload.get("what") == "connected":
            self._connected.add(flow.flow_id)
            for h, ev in self._waiting.pop(flow.flow_id, ()):
                self._push(self.now, RANK_APP, "app", (h, ev, None))
        driver = self.drivers[host]
        for ev in driver.on_notify(flow, host, payload):
            self._push(self.now, RANK_APP, "app", (host, ev, None))

    # -- egress ---------------------------------------------------------------------

    def _drain(self, host):
        rt = self.hosts[host]
        for flow, entry in rt.rings.drain():
            srule = lookup_srule(rt.handle.seg_rules, entry.srule_id)
            for bp in segment(entry.blueprint, srule):
                try:
                    transport = serialize_transport(bp, rt.units)
                except RuntimeFault as exc:
                    self.trace.add(self.now, host, "error", where="serialize", what=repr(exc))
                    continue
                dst_host = self.addr_to_host.get(flow[2])
                if dst_host is None:
                    self.trace.add(self.now, host, "error", where="route",
                                   what=f"no host with addr {flow[2]}")
                    continue
                pkt = WirePacket(host, dst_host, flow[0], flow[2], transport,
                                 priority=entry.priority, queue=entry.queue, flow=flow,
                                 tags=entry.tags)
                rt.sched.enqueue(pkt, entry.queue)
        while rt.egress_free_at <= self.now:
            pkt = rt.sched.dequeue(self.now)
            if pkt is None:
                if rt.sched.pending():
                    ready = rt.sched.next_ready(self.now)
                    if ready is not None:
                        self._push(max(ready, self.now + 1), RANK_DRAIN, "drain", host)
                break
            self._transmit(rt, host, pkt)

    def _transmit(self, rt, host, pkt):
        link = self.links.get((host, pkt.dst_host))
        if link is None:
            self.trace.add(self.now, host, "error", where="route",
                           what=f"no link {host}->{pkt.dst_host}")
            return
        ser = math.ceil(pkt.wire_len * 1_000_000_000 / link.bandwidth)
        rt.egress_free_at = self.now + ser
        self._push(rt.egress_free_at, RANK_DRAIN, "drain", host)
        self.counters["pkts_tx"] += 1
        self._link_count(host, pkt.dst_host, "tx")
        self.trace.add(self.now, host, "tx", dst=pkt.dst_host, length=pkt.wire_len,
                       prio=pkt.priority)
        if self.rng_net.random() < link.loss_for(host):
            self.counters["pkts_dropped"] += 1
            self._link_count(host, pkt.dst_host, "drop")
            self.trace.add(self.now + ser, host, "drop", dst=pkt.dst_host, length=pkt.wire_len)
            return
        arrival = self.now + ser + link.delay_ns
        if link.reorder > 0 and self.rng_net.random() < link.reorder:
            arrival += ser + 1  # one extra serialization slot: successor overtakes
        self.in_flight += 1
        self._push(arrival, RANK_NETWORK, "arrival", (pkt.dst_host, pkt.to_bytes()))

    def _link_count(self, src, dst, what):
        key = f"{src}->{dst}"
        entry = self.link_counts.setdefault(key, {"tx": 0, "rx": 0, "drop": 0})
        entry[what] += 1

    # -- slowdown calibration -----------------------------------------------------------

    def _calibrate_slowdowns(self):
        cache = {}
        slowdowns = {}
        for m in self.tracker.completed():
            key = (m.flow, m.size)
            if key not in cache:
                cache[key] = self._calibration_latency(m)
            base = cache[key]
            if base:
                slowdowns[m.index] = max(1.0, (m.end - m.start) / base)
        return slowdowns

    def _calibration_latency(self, message):
        flow = self.flow_by_id[message.flow]
        quiet_links = tuple(l.__class__(l.a, l.b, l.delay_ns, l.bandwidth, 0.0, 0.0)
                            for l in self.scenario.links)
        stream = 0 if self.drivers[flow.src].message_based else message.stream
        script = (ScriptEntry(0, flow.src, "send", flow.flow_id, stream, message.size),)
        calib = Scenario(
            hosts=self.scenario.hosts,
            links=quiet_links,
            flows=self.scenario.flows,
            script=script,
            seed=self.scenario.seed,
            duration_ns=self.scenario.duration_ns,
            mss=self.scenario.mss,
            trace_level="off",
            assertions=(),
        )
        result = Engine(calib, compute_slowdown=False).run()
        for rec in result.messages:
            if rec["latency_ns"] is not None:
                return rec["latency_ns"]
        return None


def _instr_fields(instr):
    """Compact trace detail per instruction kind (frozen schema)."""
    if isinstance(instr, NewOrderedData):
        return {"uid": instr.uid, "dir": instr.direction, "size": instr.size}
    if isinstance(instr, AddRxSegment):
        return {"uid": instr.uid, "offset": instr.offset, "length": len(instr.data)}
    if isinstance(instr, RxFlushAndNotify):
        return {"uid": instr.uid, "length": instr.length}
    if isinstance(instr, AddTxData):
        return {"uid": instr.uid, "length": len(instr.data)}
    if isinstance(instr, TxFlush):
        return {"uid": instr.uid, "length": instr.length}
    if isinstance(instr, PktGen):
        bp = instr.blueprint
        fields = {k: v for k, v in bp.values.items() if isinstance(v, int)}
        payload = None
        if bp.payload is not None and hasattr(bp.payload, "length"):
            payload = {"uid": bp.payload.uid, "offset": bp.payload.offset,
                       "length": bp.payload.length}
        elif bp.payload is not None:
            payload = {"nested": len(bp.payload.parts)}
        return {"flow": instr.flow, "fields": fields, "payload": payload,
                "srule": instr.srule_id, "prio": instr.priority, "tags": instr.tags}
    if isinstance(instr, SetQueueParam):
        return {"param": instr.param, "value": instr.value}
    if isinstance(instr, TimerOp):
        return {"flow": instr.flow, "tid": instr.tid, "timer_op": instr.op,
                "duration": instr.duration}
    if isinstance(instr, (NewCtx, DelCtx)):
        return {"ctx": instr.spec_name, "key": instr.key}
    if isinstance(instr, Notify):
        return {"flow": instr.flow, "msg": instr.payload}
    return {}


def run(scenario, compute_slowdown=True):
    """Execute a scenario; returns the SimResult (trace + metrics)."""
    return Engine(scenario, compute_slowdown=compute_slowdown).run()
