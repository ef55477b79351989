"""Per-message completion records, percentile summaries, flow throughput."""

from dataclasses import dataclass


def percentile(values, q):
    """Nearest-rank percentile; values need not be sorted."""
    if not values:
        return None
    ordered = sorted(values)
    rank = max(1, -(-len(ordered) * q // 100))  # ceil(n*q/100)
    return ordered[rank - 1]


@dataclass
class Message:
    flow: int
    stream: int
    index: int
    lo: int
    hi: int
    size: int
    start: int
    end: int = None

    @property
    def complete(self):
        return self.end is not None


class MessageTracker:
    def __init__(self):
        self.messages = []
        self._open = {}  # (flow, stream) -> [Message] awaiting completion

    def add(self, flow, stream, lo, size, start):
        msg = Message(flow, stream, len(self.messages), lo, lo + size, size, start)
        self.messages.append(msg)
        self._open.setdefault((flow, stream), []).append(msg)
        return msg

    def on_delivered(self, flow, stream, total_bytes, now):
        pending = self._open.get((flow, stream))
        if not pending:
            return
        done = [m for m in pending if total_bytes >= m.hi]
        for m in done:
            m.end = now
            pending.remove(m)
        if not pending:
            del self._open[(flow, stream)]

    def all_complete(self):
        return not self._open

    def completed(self):
        return [m for m in self.messages if m.complete]


def message_records(tracker, slowdowns=None):
    out = []
    for m in tracker.messages:
        rec = {
            "flow": m.flow,
            "stream": m.stream,
            "msg": m.index,
            "size": m.size,
            "start": m.start,
            "end": m.end,
            "latency_ns": None if m.end is None else m.end - m.start,
            "slowdown": None,
        }
        if slowdowns and m.complete:
            rec["slowdown"] = slowdowns.get(m.index)
        out.append(rec)
    return out


def summarize(records, counters):
    """Aggregate message records into the frozen summary structure."""
    by_class = {}
    for r in records:
        if r["latency_ns"] is None:
            continue
        by_class.setdefault(r["size"], []).append(r)
    classes = []
    for size in sorted(by_class):
        rows = by_class[size]
        lats = [r["latency_ns"] for r in rows]
        slows = [r["slowdown"] for r in rows if r["slowdown"] is not None]
        classes.append({
            "size": size,
            "count": len(rows),
            "p50_latency_ns": percentile(lats, 50),
            "p99_latency_ns": percentile(lats, 99),
            "p50_slowdown": percentile(slows, 50) if slows else None,
            "p99_slowdown": percentile(slows, 99) if slows else None,
        })
    flows = {}
    for r in records:
        if r["latency_ns"] is None:
            continue
        f = flows.setdefault(r["flow"], {"bytes": 0, "first_start": r["start"], "last_end": r["end"]})
        f["bytes"] += r["size"]
        f["first_start"] = min(f["first_start"], r["start"])
        f["last_end"] = max(f["last_end"], r["end"])
    flow_rows = []
    for fid in sorted(flows):
        f = flows[fid]
        span = max(1, f["last_end"] - f["first_start"])
        flow_rows.append({"flow": fid, "delivered_bytes": f["bytes"],
                          "throughput_bytes_per_sec": f["bytes"] * 1_000_000_000 / span})
    return {
        "message_classes": classes,
        "flows": flow_rows,
        "messages_total": len(records),
        "messages_completed": sum(1 for r in records if r["latency_ns"] is not None),
        "retransmissions": counters.get("retransmissions", 0),
        "packets_tx": counters.get("pkts_tx", 0),
        "packets_rx": counters.get("pkts_rx", 0),
        "packets_dropped": counters.get("pkts_dropped", 0),
        "delivered_bytes": counters.get("delivered_bytes", 0),
        "sent_bytes": counters.get("sent_bytes", 0),
    }
