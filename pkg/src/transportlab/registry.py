"""One-time deploy registration: validate a protocol's declarations atomically.

register_deploy either returns an immutable handle or raises a specific
DeployError; no partially registered state can be observed.  Re-registering
the same spec yields a behaviorally identical handle.
"""

from dataclasses import dataclass, field

from .chain import DispatchTable
from .errors import DanglingReference, DeployError, DuplicateContextName
from .scheduler import SchedulerSpec, default_fifo_spec, validate_spec


@dataclass(frozen=True)
class EventSchedSpec:
    """Event-ordering request.  The simulated target only runs FIFO event
    ordering; anything else is accepted, parsed, and recorded unsupported."""
    kind: str = "fifo"
    blocks: tuple = ()


@dataclass
class DeploySpec:
    name: str
    dispatch: DispatchTable
    processors: dict                      # processor id -> callable(ev, ctxs, pad, out)
    ctx_specs: tuple = ()
    parser: object = None                 # callable(transport bytes, net meta) -> [Event]
    seg_rules: dict = field(default_factory=dict)
    coalescing_rules: tuple = ()
    pkt_sched: SchedulerSpec = None
    ev_sched: EventSchedSpec = EventSchedSpec()
    scratch: dict = field(default_factory=dict)
    srule_refs: tuple = ()                # seg-rule ids processors cite at runtime


class DeployHandle:
    """Validated, immutable view of a DeploySpec."""

    def __init__(self, spec):
        self.name = spec.name
        self.dispatch = spec.dispatch
        self.processors = dict(spec.processors)
        self.ctx_specs = {c.name: c for c in spec.ctx_specs}
        self.parser = spec.parser
        self.seg_rules = dict(spec.seg_rules)
        self.coalescing_rules = tuple(spec.coalescing_rules)
        self.pkt_sched = spec.pkt_sched or default_fifo_spec()
        self.ev_sched = spec.ev_sched
        self.ev_sched_supported = spec.ev_sched.kind == "fifo"
        self.scratch = dict(spec.scratch)
        # timer id -> (declaring context spec name, expiry event type)
        self.timer_map = {}
        for c in spec.ctx_specs:
            for tid, ev_type in c.timers:
                self.timer_map[tid] = (c.name, ev_type)


def register_deploy(spec):
    if not isinstance(spec.dispatch, DispatchTable):
        raise DeployError("dispatch must be a DispatchTable")
    for ev_type, chain in spec.dispatch.entries.items():
        if not chain:
            raise DeployError(f"event {ev_type!r}: empty processor chain")
        for pid in chain:
            if pid not in spec.processors:
                raise DanglingReference(f"event {ev_type!r} references unknown processor {pid!r}")

    names = [c.name for c in spec.ctx_specs]
    if len(set(names)) != len(names):
        raise DuplicateContextName(f"duplicate context name in {sorted(names)}")

    for rid in spec.srule_refs:
        if rid not in spec.seg_rules:
            raise DanglingReference(f"segmentation rule {rid} referenced but not registered")

    seen_tids = set()
    for c in spec.ctx_specs:
        for tid, ev_type in c.timers:
            if tid in seen_tids:
                raise DeployError(f"timer id {tid!r} declared in more than one context")
            seen_tids.add(tid)
            if ev_type not in spec.dispatch.entries:
                raise DanglingReference(
                    f"timer {tid!r} expires into unregistered event {ev_type!r}")

    if spec.pkt_sched is not None:
        validate_spec(spec.pkt_sched)

    if spec.parser is not None and not callable(spec.parser):
        raise DeployError("parser must be callable")

    return DeployHandle(spec)
