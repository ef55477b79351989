"""Packet generation: blueprints, segmentation, coalescing, serialization.

Blueprints describe packets without materializing them.  Segmentation expands
one blueprint into per-packet blueprints using first/mid/last field rules,
after which serialization fetches payload bytes from the TX data unit and
fills computed checksum fields.
"""

import math
from dataclasses import dataclass, field

from .errors import ExprError, UnknownSegRule
from .headers import HeaderLayout

# -- expressions ------------------------------------------------------------

_PREV_PAYLOAD_LEN = ("prev_payload_len",)


def parse_expr(text):
    """Sum-of-terms expression: int | bp.hdr.NAME | prev.hdr.NAME | prev.payload_len."""
    terms = []
    for raw in str(text).split("+"):
        tok = raw.strip()
        if not tok:
            raise ExprError(f"empty term in {text!r}")
        if tok.lstrip("-").isdigit():
            terms.append(("const", int(tok)))
        elif tok == "prev.payload_len":
            terms.append(("prev_payload_len",))
        elif tok.startswith("bp.hdr."):
            terms.append(("bp_field", tok[len("bp.hdr."):]))
        elif tok.startswith("prev.hdr."):
            terms.append(("prev_field", tok[len("prev.hdr."):]))
        else:
            raise ExprError(f"cannot parse term {tok!r} in {text!r}")
    return Expr(tuple(terms))


@dataclass(frozen=True)
class Expr:
    terms: tuple

    @property
    def references_prev(self):
        return any(t[0].startswith("prev") for t in self.terms)


def _as_expr(x):
    if isinstance(x, Expr):
        return x
    if isinstance(x, int):
        return Expr((("const", x),))
    return parse_expr(x)


def eval_seg_expr(expr, bp_values, prev, width=32):
    """Evaluate against the blueprint values and the previous materialized
    packet (a (values, payload_len) pair, or None); wraps at `width` bits."""
    expr = _as_expr(expr)
    total = 0
    for term in expr.terms:
        tag = term[0]
        if tag == "const":
            total += term[1]
        elif tag == "bp_field":
            try:
                total += int(bp_values[term[1]])
            except KeyError:
                raise ExprError(f"blueprint has no field {term[1]!r}") from None
        elif tag == "prev_field":
            if prev is None:
                raise ExprError("prev.* used with no preceding packet")
            try:
                total += int(prev[0][term[1]])
            except KeyError:
                raise ExprError(f"previous packet has no field {term[1]!r}") from None
        elif tag == "prev_payload_len":
            if prev is None:
                raise ExprError("prev.* used with no preceding packet")
            total += prev[1]
    return total % (1 << width)


# -- blueprint types ---------------------------------------------------------

@dataclass
class Computed:
    """Field value filled at serialization time (RFC 1071 internet checksum).

    coverage: tuple of field names to sum over, or None for the whole
    serialized packet (header with this field zeroed, options, payload).
    """
    algorithm: str = "internet"
    coverage: tuple = None


@dataclass
class DataPayload:
    uid: object
    offset: int
    length: int
    seg_unit: int = 1460  # max payload bytes per generated packet

    def __post_init__(self):
        if self.length < 0:
            raise ValueError("payload length must be >= 0")
        if self.seg_unit <= 0:
            raise ValueError("seg_unit must be positive")


@dataclass
class NestedPayload:
    parts: tuple


@dataclass
class Blueprint:
    layout: HeaderLayout
    values: dict
    payload: object = None  # None | DataPayload | NestedPayload
    options: bytes = b""

    def concrete_values(self):
        return {n: (0 if isinstance(v, Computed) else v) for n, v in self.values.items()}


@dataclass(frozen=True)
class FieldRule:
    field: str
    first: Expr
    mid: Expr
    last: Expr
    only: Expr = None  # defaults to `first` when a single packet is generated

    def __post_init__(self):
        object.__setattr__(self, "first", _as_expr(self.first))
        object.__setattr__(self, "mid", _as_expr(self.mid))
        object.__setattr__(self, "last", _as_expr(self.last))
        if self.only is not None:
            object.__setattr__(self, "only", _as_expr(self.only))
        if self.first.references_prev:
            raise ExprError(f"rule for {self.field}: `first` may not reference prev.*")


@dataclass(frozen=True)
class SegRule:
    rule_id: int
    field_rules: tuple


def segment(bp, srule=None, max_payload=None):
    """Expand a blueprint into concrete single-packet blueprints.

    The per-packet payload cap comes from the Data payload's seg_unit unless
    overridden.  Packet 0 takes each rule's `first` value, the final packet
    `last`, packets in between `mid`; a lone packet takes `only` (default
    `first`).
    """
    if isinstance(bp.payload, NestedPayload):
        return [bp]
    if bp.payload is None:
        count = 1
        lengths = [0]
    else:
        cap = max_payload or bp.payload.seg_unit
        count = max(1, math.ceil(bp.payload.length / cap))
        lengths = [min(cap, bp.payload.length - i * cap) for i in range(count)]
    out = []
    prev = None
    for i in range(count):
        values = dict(bp.values)
        if srule is not None:
            for rule in srule.field_rules:
                if count == 1:
                    expr = rule.only if rule.only is not None else rule.first
                elif i == 0:
                    expr = rule.first
                elif i == count - 1:
                    expr = rule.last
                else:
                    expr = rule.mid
                width = bp.layout.width_of(rule.field)
                values[rule.field] = eval_seg_expr(expr, bp.concrete_values(), prev, width)
        if bp.payload is None:
            payload = None
        else:
            payload = DataPayload(bp.payload.uid, bp.payload.offset + i * (max_payload or bp.payload.seg_unit),
                                  lengths[i], bp.payload.seg_unit)
        out.append(Blueprint(bp.layout, values, payload, bp.options))
        prev = (values, lengths[i])
    return out


# -- checksum + serialization -------------------------------------------------

def internet_checksum(data: bytes) -> int:
    """RFC 1071: ones-complement of the ones-complement 16-bit word sum."""
    if len(data) % 2:
        data = data + b"\x00"
    total = 0
    for i in range(0, len(data), 2):
        total += int.from_bytes(data[i:i + 2], "big")
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def serialize_transport(bp, store):
    """Serialize one single-packet blueprint to transport bytes.

    Payload bytes come from the TX data unit via tx_read; computed checksum
    fields are filled last over their declared coverage.
    """
    if isinstance(bp.payload, DataPayload):
        payload = store.tx_read(bp.payload.uid, bp.payload.offset, bp.payload.length)
    elif isinstance(bp.payload, NestedPayload):
        payload = b"".join(serialize_transport(part, store) for part in bp.payload.parts)
    else:
        payload = b""
    header = bytearray(bp.layout.pack(bp.concrete_values()))
    body = bytes(header) + bp.options + payload
    for name, value in bp.values.items():
        if not isinstance(value, Computed):
            continue
        if value.algorithm != "internet":
            raise ValueError(f"unknown checksum algorithm {value.algorithm!r}")
        lo, hi = bp.layout.byte_span(name)
        if hi - lo != 2:
            raise ValueError(f"checksum field {name} must be 16 bits")
        if value.coverage is None:
            covered = body
        else:
            covered = b"".join(body[slice(*bp.layout.byte_span(f))] for f in value.coverage)
        ck = internet_checksum(covered)
        header[lo:hi] = ck.to_bytes(2, "big")
        body = bytes(header) + bp.options + payload
    return body


# -- wire packets -------------------------------------------------------------

LINK_HEADER = 4      # src host u16 + dst host u16
NET_HEADER = 12      # src addr u32 + dst addr u32 + total length u32


@dataclass
class WirePacket:
    src_host: int
    dst_host: int
    src_addr: int
    dst_addr: int
    transport: bytes
    priority: int = 0
    queue: object = None   # QueueRef; scheduling metadata, not serialized
    flow: tuple = None     # flow key; scheduling metadata, not serialized
    tags: tuple = ()

    @property
    def total_length(self):
        return NET_HEADER + len(self.transport)

    @property
    def wire_len(self):
        return LINK_HEADER + self.total_length

    def to_bytes(self):
        return (self.src_host.to_bytes(2, "big") + self.dst_host.to_bytes(2, "big")
                + self.src_addr.to_bytes(4, "big") + self.dst_addr.to_bytes(4, "big")
                + self.total_length.to_bytes(4, "big") + self.transport)

    @classmethod
    def from_bytes(cls, data):
        if len(data) < LINK_HEADER + NET_HEADER:
            raise ValueError("short packet")
        src_host = int.from_bytes(data[0:2], "big")
        dst_host = int.from_bytes(data[2:4], "big")
        src_addr = int.from_bytes(data[4:8], "big")
        dst_addr = int.from_bytes(data[8:12], "big")
        total = int.from_bytes(data[12:16], "big")
        transport = data[16:16 + (total - NET_HEADER)]
        if len(transport) != total - NET_HEADER:
            raise ValueError("total length inconsistent with byte count")
        return cls(src_host, dst_host, src_addr, dst_addr, transport)


# -- coalescing ---------------------------------------------------------------

BOTH_PAYLOAD_EMPTY = "both_payload_empty"
SAME_FLOW_ANY_PAYLOAD = "same_flow_any_payload"
KEEP_NEWEST = "keep_newest"
MERGE_PAYLOAD_APPEND = "merge_payload_append"


@dataclass(frozen=True)
class CoalescingRule:
    match_fields: tuple       # header field names that must be equal
    guard: str = BOTH_PAYLOAD_EMPTY
    action: str = KEEP_NEWEST

    def __post_init__(self):
        if self.guard not in (BOTH_PAYLOAD_EMPTY, SAME_FLOW_ANY_PAYLOAD):
            raise ValueError(f"unknown guard {self.guard!r}")
        if self.action not in (KEEP_NEWEST, MERGE_PAYLOAD_APPEND):
            raise ValueError(f"unknown action {self.action!r}")


@dataclass
class PendingPacket:
    """One pkt_gen result waiting in a flow's ring for materialization."""
    blueprint: Blueprint
    srule_id: int = None
    queue: object = None
    priority: int = 0
    tags: tuple = ()


def _fields_match(rule, a, b):
    for f in rule.match_fields:
        va = a.values.get(f)
        vb = b.values.get(f)
        if va is None or vb is None or isinstance(va, Computed) or va != vb:
            return False
    return True


def _guard_holds(rule, a, b):
    if rule.guard == BOTH_PAYLOAD_EMPTY:
        return a.payload is None and b.payload is None
    return True


def coalesce_into(ring, entry, rules):
    """Apply coalescing rules, then append the entry if it was not absorbed."""
    for rule in rules:
        for i, old in enumerate(ring):
            if old.blueprint.layout is not entry.blueprint.layout:
                continue
            if not _fields_match(rule, old.blueprint, entry.blueprint):
                continue
            if not _guard_holds(rule, old.blueprint, entry.blueprint):
                continue
            if rule.action == KEEP_NEWEST:
                ring[i] = entry
                return
            old_p, new_p = old.blueprint.payload, entry.blueprint.payload
            if (isinstance(old_p, DataPayload) and isinstance(new_p, DataPayload)
                    and old_p.uid == new_p.uid
                    and old_p.offset + old_p.length == new_p.offset):
                old_p.length += new_p.length
                return
    ring.append(entry)


class PendingRings:
    """Per-flow rings of pending packet blueprints, coalesced at enqueue."""

    def __init__(self, rules=()):
        self.rules = tuple(rules)
        self._rings = {}

    def push(self, flow, entry):
        ring = self._rings.setdefault(flow, [])
        coalesce_into(ring, entry, self.rules)

    def drain(self):
        """Yield (flow, entry) in flow-arrival order and clear the rings."""
        for flow, ring in list(self._rings.items()):
            for entry in ring:
                yield flow, entry
        self._rings.clear()

    def __len__(self):
        return sum(len(r) for r in self._rings.values())


def lookup_srule(seg_rules, srule_id):
    if srule_id is None:
        return None
    try:
        return seg_rules[srule_id]
    except KeyError:
        raise UnknownSegRule(f"segmentation rule {srule_id} not registered") from None
