"""Declarative header layouts shared by event parsers and packet blueprints.

A layout is an ordered list of (field name, bit width).  Fields pack
big-endian, most significant bit first; the total width must be a whole
number of bytes.
"""

from .errors import ExprError


class HeaderLayout:
    def __init__(self, name, fields):
        self.name = name
        self.fields = tuple((str(n), int(w)) for n, w in fields)
        seen = set()
        for n, w in self.fields:
            if n in seen:
                raise ValueError(f"layout {name}: duplicate field {n}")
            if w <= 0:
                raise ValueError(f"layout {name}: field {n} has width {w}")
            seen.add(n)
        self.total_bits = sum(w for _, w in self.fields)
        if self.total_bits % 8:
            raise ValueError(f"layout {name}: total width {self.total_bits} bits is not byte-aligned")
        self.byte_size = self.total_bits // 8
        self._offsets = {}
        pos = 0
        for n, w in self.fields:
            self._offsets[n] = (pos, w)
            pos += w

    def width_of(self, field):
        try:
            return self._offsets[field][1]
        except KeyError:
            raise ExprError(f"layout {self.name}: no field {field!r}") from None

    def byte_span(self, field):
        """(start, end) byte offsets of a byte-aligned field."""
        pos, w = self._offsets[field]
        if pos % 8 or w % 8:
            raise ValueError(f"layout {self.name}: field {field} is not byte-aligned")
        return pos // 8, (pos + w) // 8

    def pack(self, values):
        acc = 0
        for n, w in self.fields:
            try:
                v = int(values[n])
            except KeyError:
                raise ValueError(f"layout {self.name}: missing value for {n}") from None
            if v < 0 or v >> w:
                raise ValueError(f"layout {self.name}: value {v} does not fit {n}:{w}")
            acc = acc << w | v
        return acc.to_bytes(self.byte_size, "big")

    def unpack(self, data):
        if len(data) < self.byte_size:
            raise ValueError(f"layout {self.name}: need {self.byte_size} bytes, got {len(data)}")
        acc = int.from_bytes(data[:self.byte_size], "big")
        out = {}
        pos = self.total_bits
        for n, w in self.fields:
            pos -= w
            out[n] = acc >> pos & ((1 << w) - 1)
        return out

    def __contains__(self, field):
        return field in self._offsets
