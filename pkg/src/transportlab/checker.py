"""Bounded-exhaustive exploration of one event-processing chain.

Enumerates every assignment of a finite value domain over event metadata and
context fields, dispatches each through the chain on cloned contexts, groups
outcomes by instruction kind-sequence, and evaluates assertion predicates.
Violations replay standalone: each holds the assignment, the predicate name,
and the emitted instructions as evidence.
"""

import itertools
from dataclasses import dataclass, field

from .chain import dispatch
from .context import ContextBundle
from .errors import DomainTooLarge, UnknownProperty
from .events import Event
from .instructions import kind_sequence

MAX_ASSIGNMENTS = 10_000_000


@dataclass(frozen=True)
class FieldDomain:
    target: str    # "event" or a context spec name
    name: str
    values: tuple  # finite, ordered


def int_range(lo, hi, step=1):
    return tuple(range(lo, hi + 1, step))


@dataclass
class DomainSpec:
    fields: tuple                 # FieldDomain, enumerated in order
    assumptions: tuple = ()       # (name, predicate(assignment)) pairs

    def size(self):
        n = 1
        for f in self.fields:
            n *= len(f.values)
        return n


@dataclass
class Assignment:
    values: dict  # (target, name) -> value

    def __getitem__(self, key):
        return self.values[key]

    def get(self, target, name):
        return self.values[(target, name)]


@dataclass
class Violation:
    assignment: Assignment
    predicate: str
    instructions: list
    kinds: tuple


@dataclass
class CheckReport:
    explored: int
    satisfying: int
    outcome_classes: dict = field(default_factory=dict)  # kind-sequence -> count
    violations: list = field(default_factory=list)
    errors: int = 0

    @property
    def ok(self):
        return not self.violations


def _assignments(domain):
    names = [(f.target, f.name) for f in domain.fields]
    pools = [f.values for f in domain.fields]
    for combo in itertools.product(*pools):
        yield Assignment(dict(zip(names, combo)))


def explore(handle, event_factory, context_factory, domain, assertions):
    """Run every assumption-satisfying assignment through the chain.

    event_factory(assignment) -> Event; context_factory(assignment) ->
    {spec name: Context}.  Each assertion is (name, predicate(assignment,
    instructions, contexts)).
    """
    total = domain.size()
    if total > MAX_ASSIGNMENTS:
        raise DomainTooLarge(f"joint domain has {total} assignments (max {MAX_ASSIGNMENTS})")
    report = CheckReport(explored=0, satisfying=0)
    for assignment in _assignments(domain):
        report.explored += 1
        if not all(pred(assignment) for _, pred in domain.assumptions):
            continue
        report.satisfying += 1
        contexts = context_factory(assignment)
        event = event_factory(assignment)
        instructions = dispatch(handle, event, ContextBundle(contexts))
        kinds = kind_sequence(instructions)
        report.outcome_classes[kinds] = report.outcome_classes.get(kinds, 0) + 1
        for name, predicate in assertions:
            if not predicate(assignment, instructions, contexts):
                report.violations.append(Violation(assignment, name, instructions, kinds))
    return report


def replay(handle, event_factory, context_factory, violation, assertions):
    """Re-dispatch one violating assignment standalone; returns the failing
    predicate names (non-empty iff the violation reproduces)."""
    contexts = context_factory(violation.assignment)
    event = event_factory(violation.assignment)
    instructions = dispatch(handle, event, ContextBundle(contexts))
    failed = []
    for name, predicate in assertions:
        if not predicate(violation.assignment, instructions, contexts):
            failed.append(name)
    return failed


# -- property registry ----------------------------------------------------------

@dataclass(frozen=True)
class PropertySpec:
    name: str
    protocol: str
    description: str
    build: object  # callable(handle, mss) -> (event_factory, context_factory, domain, assertions)


_REGISTRY = {}


def register_property(spec):
    _REGISTRY[(spec.protocol, spec.name)] = spec


def get_property(protocol, name):
    try:
        return _REGISTRY[(protocol, name)]
    except KeyError:
        raise UnknownProperty(f"no property {name!r} for protocol {protocol!r}; "
                              f"have {sorted(n for p, n in _REGISTRY if p == protocol)}") from None


def properties_for(protocol):
    return sorted(n for p, n in _REGISTRY if p == protocol)


def check_property(protocol, name, mss=1460, buggy=False):
    from .protocols import protocol_module
    from .registry import register_deploy
    module = protocol_module(protocol)
    kwargs = {"mss": mss}
    if protocol == "tcp":
        kwargs["fast_retransmit_bug"] = buggy
    handle = register_deploy(module.build_deploy_spec(**kwargs))
    spec = get_property(protocol, name)
    event_factory, context_factory, domain, assertions = spec.build(handle, mss)
    return explore(handle, event_factory, context_factory, domain, assertions)


# -- TCP properties ----------------------------------------------------------------

def _tcp_ack_property(handle, mss):
    """The fast-retransmit rule: any data blueprint emitted while handling an
    ack must carry at least one payload byte (no empty-payload packets)."""
    from .events import NETWORK
    from .instructions import PktGen
    from .packetgen import DataPayload

    base = 100_000
    flow = (10, 5000, 20, 80)

    fields = (
        FieldDomain("conn", "pipe", int_range(0, 8 * mss, mss)),        # send_next - send_una
        FieldDomain("conn", "unsent", int_range(0, 2 * mss, mss // 2)), # data_end - send_next
        FieldDomain("conn", "cwnd_size", tuple(k * mss for k in (1, 2, 3, 4, 8, 16))),
        FieldDomain("conn", "ssthresh", (2 * mss, 8 * mss)),
        FieldDomain("conn", "duplicate_acks", int_range(0, 4)),
    )
    assumptions = (
        ("send_next_ge_send_una", lambda a: a.get("conn", "pipe") >= 0),
        ("data_end_ge_send_next", lambda a: a.get("conn", "unsent") >= 0),
        ("cwnd_positive", lambda a: a.get("conn", "cwnd_size") > 0),
    )

    def context_factory(a):
        spec = handle.ctx_specs["conn"]
        pipe = a.get("conn", "pipe")
        unsent = a.get("conn", "unsent")
        ctx = spec.instantiate({
            "state": "ESTABLISHED",
            "smss": mss,
            "init_seq": base - 1,
            "send_una": base,
            "send_next": base + pipe,
            "data_end": base + pipe + unsent,
            "cwnd_size": a.get("conn", "cwnd_size"),
            "ssthresh": a.get("conn", "ssthresh"),
            "duplicate_acks": a.get("conn", "duplicate_acks"),
            "first_send_req": False,
            "recv_init_seq": 1000,
            "recv_next": 1000,
        })
        return {"conn": ctx}

    def event_factory(a):
        # a duplicate cumulative ack at the left window edge
        return Event(NETWORK, "tcp_ack", keys={"conn": flow},
                     meta={"ack_seq": base, "rwnd_size": 65535, "seq": 1000})

    def no_empty_payload(a, instructions, contexts):
        for instr in instructions:
            if isinstance(instr, PktGen) and isinstance(instr.blueprint.payload, DataPayload):
                if instr.blueprint.payload.length <= 0:
                    return False
        return True

    return event_factory, context_factory, DomainSpec(fields, assumptions), \
        (("previously_unsent_data", no_empty_payload),)


def _tcp_cwnd_property(handle, mss):
    """The congestion window stays positive through any ack handling."""
    event_factory, context_factory, domain, _ = _tcp_ack_property(handle, mss)

    def cwnd_positive(a, instructions, contexts):
        return contexts["conn"].cwnd_size > 0

    return event_factory, context_factory, domain, (("cwnd_positive", cwnd_positive),)


register_property(PropertySpec(
    name="fast_retransmit_unsent_data",
    protocol="tcp",
    description="duplicate-ack handling never generates an empty-payload data packet",
    build=_tcp_ack_property,
))

register_property(PropertySpec(
    name="cwnd_positive",
    protocol="tcp",
    description="congestion window stays positive across ack handling",
    build=_tcp_cwnd_property,
))
