"""Composable packet-scheduling blocks feeding one egress stream.

Blocks (FIFO, strict priority, weighted round-robin, token-bucket rate
limiter) compose into a tree: an edge routes one block's output into an input
queue of its parent, and the root's output feeds the link.  Per-flow blocks
create queues lazily per flow key and cannot sit downstream of another block.
"""

import math
from collections import deque
from dataclasses import dataclass, field

from .errors import InvalidSchedulerComposition, UnknownQueue, UnsupportedParam

FIFO = "fifo"
STRICT_PRIORITY = "strict_priority"
WRR = "wrr"
RATE_LIMIT = "rate_limit"

# target capability descriptor: supported block kinds and queue-count bound
TARGET_CAPS = {FIFO: 64, STRICT_PRIORITY: 64, WRR: 64, RATE_LIMIT: 64}


@dataclass(frozen=True)
class PerFlow:
    """Queue-count marker asking for one queue per flow key."""
    fields: tuple = ("local_addr", "local_port", "remote_addr", "remote_port")


@dataclass(frozen=True)
class BlockSpec:
    block_id: str
    kind: str
    queue_cnt: object = 1  # int or PerFlow
    params: dict = field(default_factory=dict)  # priorities / weights / rate / burst


@dataclass(frozen=True)
class SchedulerSpec:
    blocks: tuple
    root: str
    edges: tuple = ()  # (child block id, parent block id, parent queue index)


@dataclass(frozen=True)
class QueueRef:
    block: str
    index: int = 0
    flow: tuple = None  # addresses per-flow queues instead of index


def validate_spec(spec):
    ids = [b.block_id for b in spec.blocks]
    if len(set(ids)) != len(ids):
        raise InvalidSchedulerComposition("duplicate block ids")
    by_id = {b.block_id: b for b in spec.blocks}
    if spec.root not in by_id:
        raise InvalidSchedulerComposition(f"root {spec.root!r} is not a block")
    for b in spec.blocks:
        if b.kind not in TARGET_CAPS:
            raise InvalidSchedulerComposition(f"unknown block kind {b.kind!r}")
        if isinstance(b.queue_cnt, int):
            if not 1 <= b.queue_cnt <= TARGET_CAPS[b.kind]:
                raise InvalidSchedulerComposition(
                    f"block {b.block_id}: queue count {b.queue_cnt} outside 1..{TARGET_CAPS[b.kind]}")
        elif not isinstance(b.queue_cnt, PerFlow):
            raise InvalidSchedulerComposition(f"block {b.block_id}: bad queue_cnt")
    parents = {}
    for child, parent, qidx in spec.edges:
        if child not in by_id or parent not in by_id:
            raise InvalidSchedulerComposition(f"edge {child}->{parent} references unknown block")
        if isinstance(by_id[parent].queue_cnt, PerFlow):
            raise InvalidSchedulerComposition(
                f"per-flow block {parent} cannot be downstream of {child}")
        if not 0 <= qidx < by_id[parent].queue_cnt:
            raise InvalidSchedulerComposition(f"edge into {parent} queue {qidx} out of range")
        if child in parents:
            raise InvalidSchedulerComposition(f"block {child} output feeds more than one input")
        if child == spec.root:
            raise InvalidSchedulerComposition("root cannot feed another block")
        parents[child] = parent
    for b in spec.blocks:
        if b.block_id == spec.root:
            continue
        if b.block_id not in parents:
            raise InvalidSchedulerComposition(f"block {b.block_id} is not connected to the root")
        # climb to the root, catching cycles
        seen = set()
        node = b.block_id
        while node != spec.root:
            if node in seen:
                raise InvalidSchedulerComposition("cycle in scheduler composition")
            seen.add(node)
            node = parents.get(node)
            if node is None:
                raise InvalidSchedulerComposition("dangling composition edge")
    return spec


class _Block:
    def __init__(self, spec, mss):
        self.spec = spec
        self._mss = mss
        self.per_flow = isinstance(spec.queue_cnt, PerFlow)
        self.feeders = {}  # queue index -> child _Block
        if self.per_flow:
            self._flow_order = []
            self._flow_queues = {}
        else:
            self.queues = [deque() for _ in range(spec.queue_cnt)]
        self._arrival = 0

    # queue access ---------------------------------------------------------

    def _queue_for(self, q):
        if self.per_flow:
            key = q.flow
            if key is None:
                raise UnknownQueue(f"block {self.spec.block_id} is per-flow; a flow key is required")
            if key not in self._flow_queues:
                self._flow_queues[key] = deque()
                self._flow_order.append(key)
                self._on_new_flow(key)
            return self._flow_queues[key]
        if not 0 <= q.index < len(self.queues):
            raise UnknownQueue(f"block {self.spec.block_id}: queue {q.index} out of range")
        return self.queues[q.index]

    def _on_new_flow(self, key):
        pass

    def enqueue(self, pkt, q):
        self._arrival += 1
        pkt._arrival = self._arrival
        self._queue_for(q).append(pkt)

    def _slots(self):
        """(label, queue) pairs in declaration order."""
        if self.per_flow:
            return [(k, self._flow_queues[k]) for k in self._flow_order]
        return list(enumerate(self.queues))

    def _take(self, label, queue, now):
        if queue:
            return queue.popleft()
        feeder = self.feeders.get(label)
        if feeder is not None:
            return feeder.pull(now)
        return None

    def _slot_ready(self, label, queue, now):
        if queue:
            return now
        feeder = self.feeders.get(label)
        if feeder is not None:
            return feeder.next_ready(now)
        return None

    def pending(self):
        n = sum(len(q) for _, q in self._slots())
        return n + sum(f.pending() for f in self.feeders.values())

    def next_ready(self, now):
        times = [t for label, q in self._slots()
                 if (t := self._slot_ready(label, q, now)) is not None]
        return min(times) if times else None

    def set_param(self, q, param, value):
        raise UnsupportedParam(f"{self.spec.kind} block has no {param!r} parameter")


class _Fifo(_Block):
    def pull(self, now):
        best = None
        best_label = None
        for label, queue in self._slots():
            if queue and (best is None or queue[0]._arrival < best[0]._arrival):
                best, best_label = queue, label
        if best is not None:
            return best.popleft()
        for label, queue in self._slots():
            if not queue:
                pkt = self._take(label, queue, now)
                if pkt is not None:
                    return pkt
        return None


class _StrictPriority(_Block):
    def __init__(self, spec, mss):
        super().__init__(spec, mss)
        n = spec.queue_cnt if isinstance(spec.queue_cnt, int) else 0
        prios = spec.params.get("priorities")
        self.prios = {}  # label -> priority, 0 = highest
        for i in range(n):
            self.prios[i] = prios[i] if prios else i

    def _on_new_flow(self, key):
        self.prios[key] = 0

    def _order(self):
        slots = self._slots()
        order = sorted(range(len(slots)), key=lambda i: (self.prios.get(slots[i][0], 0), i))
        return [slots[i] for i in order]

    def pull(self, now):
        for label, queue in self._order():
            pkt = self._take(label, queue, now)
            if pkt is not None:
                return pkt
        return None

    def set_param(self, q, param, value):
        if param != "priority":
            raise UnsupportedParam(f"strict_priority supports only 'priority', not {param!r}")
        self._queue_for(q)  # validates the ref
        self.prios[q.flow if self.per_flow else q.index] = int(value)


class _Wrr(_Block):
    def __init__(self, spec, mss):
        super().__init__(spec, mss)
        n = spec.queue_cnt if isinstance(spec.queue_cnt, int) else 0
        weights = spec.params.get("weights")
        self.weights = {}
        for i in range(n):
            self.weights[i] = weights[i] if weights else 1
        self._ptr = 0
        self._served = 0

    def _on_new_flow(self, key):
        self.weights[key] = 1

    def pull(self, now):
        slots = self._slots()
        if not slots:
            return None
        n = len(slots)
        self._ptr %= n
        for _ in range(2 * n + 1):
            label, queue = slots[self._ptr]
            if self._served < max(1, int(self.weights.get(label, 1))):
                pkt = self._take(label, queue, now)
                if pkt is not None:
                    self._served += 1
                    return pkt
            self._ptr = (self._ptr + 1) % n
            self._served = 0
        return None

    def set_param(self, q, param, value):
        if param != "weight":
            raise UnsupportedParam(f"wrr supports only 'weight', not {param!r}")
        self._queue_for(q)
        self.weights[q.flow if self.per_flow else q.index] = int(value)


class _RateLimit(_Block):
    """Per-queue token bucket; tokens are bytes, refilled by elapsed sim time."""

    def __init__(self, spec, mss):
        super().__init__(spec, mss)
        n = spec.queue_cnt if isinstance(spec.queue_cnt, int) else 0
        rates = spec.params.get("rate")
        if rates is None:
            raise InvalidSchedulerComposition(f"rate_limit block {spec.block_id} needs a 'rate' param")
        if not isinstance(rates, (list, tuple)):
            rates = [rates] * max(n, 1)
        burst = spec.params.get("burst", 2 * mss)
        self.rate = {i: float(rates[i]) for i in range(n)}
        self.burst = {i: float(burst) for i in range(n)}
        self.tokens = {i: float(burst) for i in range(n)}
        self.stamp = {i: 0 for i in range(n)}

    def _on_new_flow(self, key):
        rate = self.spec.params.get("rate")
        burst = self.spec.params.get("burst", 2 * self._mss)
        self.rate[key] = float(rate)
        self.burst[key] = float(burst)
        self.tokens[key] = float(burst)
        self.stamp[key] = 0

    def _refill(self, label, now):
        dt = now - self.stamp[label]
        if dt > 0:
            self.tokens[label] = min(self.burst[label],
                                     self.tokens[label] + self.rate[label] * dt / 1e9)
        self.stamp[label] = max(self.stamp[label], now)

    def pull(self, now):
        for label, queue in self._slots():
            head = queue[0] if queue else None
            if head is None:
                feeder = self.feeders.get(label)
                if feeder is None:
                    continue
                # pull from the child only if tokens could cover an MSS-class
                # packet; otherwise leave it queued there
                self._refill(label, now)
                pkt = feeder.pull(now) if self.tokens[label] > 0 else None
                if pkt is None:
                    continue
                queue.append(pkt)
                head = pkt
            self._refill(label, now)
            need = head.wire_len
            if self.tokens[label] >= need:
                self.tokens[label] -= need
                return queue.popleft()
        return None

    def next_ready(self, now):
        times = []
        for label, queue in self._slots():
            if not queue:
                feeder = self.feeders.get(label)
                if feeder is not None and (t := feeder.next_ready(now)) is not None:
                    times.append(max(t, now + 1))
                continue
            self._refill(label, now)
            need = queue[0].wire_len - self.tokens[label]
            if need <= 0:
                times.append(now)
            elif self.rate[label] > 0:
                times.append(now + math.ceil(need * 1e9 / self.rate[label]))
        return min(times) if times else None

    def set_param(self, q, param, value):
        if param != "rate":
            raise UnsupportedParam(f"rate_limit supports only 'rate', not {param!r}")
        self._queue_for(q)
        label = q.flow if self.per_flow else q.index
        self._refill(label, self.stamp[label])
        self.rate[label] = float(value)


_KINDS = {FIFO: _Fifo, STRICT_PRIORITY: _StrictPriority, WRR: _Wrr, RATE_LIMIT: _RateLimit}


class Scheduler:
    def __init__(self, spec, mss=1460):
        validate_spec(spec)
        self.spec = spec
        self.blocks = {b.block_id: _KINDS[b.kind](b, mss) for b in spec.blocks}
        self.root = self.blocks[spec.root]
        for child, parent, qidx in spec.edges:
            self.blocks[parent].feeders[qidx] = self.blocks[child]

    def enqueue(self, pkt, q=None):
        if q is None:
            q = QueueRef(self.spec.root, 0)
        block = self.blocks.get(q.block)
        if block is None:
            raise UnknownQueue(f"no block {q.block!r}")
        block.enqueue(pkt, q)

    def dequeue(self, now):
        return self.root.pull(now)

    def set_queue_param(self, q, param, value):
        block = self.blocks.get(q.block)
        if block is None:
            raise UnknownQueue(f"no block {q.block!r}")
        block.set_param(q, param, value)

    def pending(self):
        return self.root.pending()

    def next_ready(self, now):
        return self.root.next_ready(now)


def build_scheduler(spec, mss=1460):
    return Scheduler(spec, mss)


def default_fifo_spec():
    return SchedulerSpec(blocks=(BlockSpec("root", FIFO, 1),), root="root")
