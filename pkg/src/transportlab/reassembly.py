"""Ordered data units: byte stores addressed by offset.

RX units collect out-of-order fragments and release a contiguous prefix to
the application; TX units hold outbound bytes for packet generation until the
protocol says the prefix is no longer needed.  Overlapping RX fragments keep
the first writer's bytes, so retransmissions that differ from the original
cannot silently change delivered data.
"""

import bisect

from .errors import (
    BeyondDeclaredSize,
    DuplicateUid,
    NotContiguous,
    RangeUnavailable,
    TrimPastEnd,
    UnknownUid,
)

RX = "rx"
TX = "tx"
INFINITE = None


class OrderedDataUnit:
    __slots__ = ("uid", "direction", "declared_size", "fub", "delivery_addr",
                 "_starts", "_frags", "_end")

    def __init__(self, uid, direction, declared_size=INFINITE, delivery_addr=None):
        self.uid = uid
        self.direction = direction
        self.declared_size = declared_size
        self.fub = 0  # RX: first unflushed byte; TX: trim cursor
        self.delivery_addr = delivery_addr
        self._starts = []  # fragment start offsets, sorted (RX)
        self._frags = []   # parallel bytearrays (RX)
        self._end = 0      # TX: logical append end
        # TX storage reuses a single fragment starting at the trim cursor
        if direction == TX:
            self._starts = [0]
            self._frags = [bytearray()]

    # -- RX -------------------------------------------------------------

    def insert(self, offset, data):
        """Insert a fragment; overlaps merge with first-writer-wins."""
        if not data:
            return
        end = offset + len(data)
        if self.declared_size is not INFINITE and end > self.declared_size:
            raise BeyondDeclaredSize(f"uid {self.uid}: fragment ends at {end}, size {self.declared_size}")
        if end <= self.fub:
            return  # entirely below the flush cursor: already delivered
        if offset < self.fub:
            data = data[self.fub - offset:]
            offset = self.fub
            end = offset + len(data)
        # gather every existing fragment touching or adjacent to [offset, end)
        i = bisect.bisect_right(self._starts, offset) - 1
        if i >= 0 and self._starts[i] + len(self._frags[i]) < offset:
            i += 1
        elif i < 0:
            i = 0
        j = i
        while j < len(self._starts) and self._starts[j] <= end:
            j += 1
        if i == j:  # stands alone
            self._starts.insert(i, offset)
            self._frags.insert(i, bytearray(data))
            return
        lo = min(offset, self._starts[i])
        hi = max(end, self._starts[j - 1] + len(self._frags[j - 1]))
        merged = bytearray(hi - lo)
        written = bytearray(hi - lo)
        for k in range(i, j):  # existing fragments first: first writer wins
            s = self._starts[k] - lo
            frag = self._frags[k]
            merged[s:s + len(frag)] = frag
            written[s:s + len(frag)] = b"\x01" * len(frag)
        for pos in range(len(data)):
            p = offset - lo + pos
            if not written[p]:
                merged[p] = data[pos]
        del self._starts[i:j]
        del self._frags[i:j]
        self._starts.insert(i, lo)
        self._frags.insert(i, merged)

    def contiguous_from_fub(self):
        """Length of the contiguous byte run starting at the flush cursor."""
        if not self._starts or self._starts[0] > self.fub:
            return 0
        return self._starts[0] + len(self._frags[0]) - self.fub

    def flush(self, length):
        """Release `length` bytes from the flush cursor; returns the bytes."""
        if length == 0:
            return b""
        if self.contiguous_from_fub() < length:
            raise NotContiguous(f"uid {self.uid}: only {self.contiguous_from_fub()} contiguous bytes, "
                                f"flush of {length} requested")
        start = self.fub - self._starts[0]
        out = bytes(self._frags[0][start:start + length])
        self.fub += length
        # drop the flushed prefix
        if start + length == len(self._frags[0]):
            del self._starts[0]
            del self._frags[0]
        else:
            self._frags[0] = self._frags[0][start + length:]
            self._starts[0] = self.fub
        return out

    def fragments(self):
        """Canonical fragment view: sorted, non-adjacent, non-overlapping."""
        return [(s, bytes(f)) for s, f in zip(self._starts, self._frags)]

    # -- TX -------------------------------------------------------------

    def append(self, data):
        if self.declared_size is not INFINITE and self._end + len(data) > self.declared_size:
            raise BeyondDeclaredSize(f"uid {self.uid}: append past declared size {self.declared_size}")
        self._frags[0].extend(data)
        self._end += len(data)

    def read(self, offset, length):
        if length == 0:
            return b""
        if offset < self.fub or offset + length > self._end:
            raise RangeUnavailable(f"uid {self.uid}: [{offset}, {offset + length}) outside "
                                   f"retained [{self.fub}, {self._end})")
        start = offset - self._starts[0]
        return bytes(self._frags[0][start:start + length])

    def trim(self, length):
        if length == 0:
            return
        if self.fub + length > self._end:
            raise TrimPastEnd(f"uid {self.uid}: trim {length} past end {self._end}")
        del self._frags[0][:length]
        self.fub += length
        self._starts[0] = self.fub

    @property
    def appended(self):
        return self._end


class DataUnitStore:
    """All live ordered data units of one host."""

    def __init__(self):
        self._units = {}

    def create(self, direction, uid, size=INFINITE, addr=None):
        if uid in self._units:
            raise DuplicateUid(f"uid {uid!r} already live")
        unit = OrderedDataUnit(uid, direction, size, addr)
        self._units[uid] = unit
        return unit

    def get(self, uid):
        try:
            return self._units[uid]
        except KeyError:
            raise UnknownUid(f"uid {uid!r} not live") from None

    def add_rx_segment(self, uid, offset, data):
        unit = self.get(uid)
        if unit.direction != RX:
            raise UnknownUid(f"uid {uid!r} is not an RX unit")
        unit.insert(offset, data)

    def rx_flush(self, uid, length):
        unit = self.get(uid)
        if unit.direction != RX:
            raise UnknownUid(f"uid {uid!r} is not an RX unit")
        return unit.flush(length)

    def add_tx_data(self, uid, data):
        unit = self.get(uid)
        if unit.direction != TX:
            raise UnknownUid(f"uid {uid!r} is not a TX unit")
        unit.append(data)

    def tx_read(self, uid, offset, length):
        unit = self.get(uid)
        if unit.direction != TX:
            raise UnknownUid(f"uid {uid!r} is not a TX unit")
        return unit.read(offset, length)

    def tx_flush(self, uid, length):
        unit = self.get(uid)
        if unit.direction != TX:
            raise UnknownUid(f"uid {uid!r} is not a TX unit")
        unit.trim(length)

    def release(self, uid):
        self._units.pop(uid, None)
