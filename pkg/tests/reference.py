"""Independent reference implementations used as test oracles.

These stay deliberately naive and separate from the package code paths they
check: an unbounded dict-backed window, a flat-array byte store with
first-writer-wins, and a byte-pair RFC 1071 sum.
"""

SEQ_MOD = 1 << 32


class NaiveWindow:
    """Dict-backed flag store; callers must keep ranges within the window."""

    def __init__(self, capacity, head=0):
        self.capacity = capacity
        self.head = head
        self.flags = {}  # absolute position -> bool

    def _behind(self, pos):
        return (pos - self.head) % SEQ_MOD > (1 << 31)

    def mark(self, lo, hi, flag=True):
        n = (hi - lo) % SEQ_MOD
        for i in range(n):
            pos = (lo + i) % SEQ_MOD
            if self._behind(pos):
                continue
            if (pos - self.head) % SEQ_MOD < self.capacity:
                self.flags[pos] = flag

    def get(self, pos):
        if self._behind(pos):
            return True
        return self.flags.get(pos, False)

    def first(self, flag=True):
        for i in range(self.capacity):
            pos = (self.head + i) % SEQ_MOD
            if self.flags.get(pos, False) == flag:
                return pos
        return None

    def slide(self):
        moved = 0
        while moved < self.capacity and self.flags.get(self.head, False):
            del self.flags[self.head]
            self.head = (self.head + 1) % SEQ_MOD
            moved += 1
        if moved == self.capacity:
            return self.head
        return self.head


class FlatStore:
    """Flat byte array with first-writer-wins, the reassembly oracle."""

    def __init__(self, size):
        self.buf = bytearray(size)
        self.written = bytearray(size)  # 0/1 per byte

    def write(self, offset, data):
        for i, b in enumerate(data):
            pos = offset + i
            if not self.written[pos]:
                self.buf[pos] = b
                self.written[pos] = 1

    def covered(self, lo, hi):
        return all(self.written[lo:hi])

    def read(self, lo, hi):
        return bytes(self.buf[lo:hi])


def ref_internet_checksum(data: bytes) -> int:
    """RFC 1071 by direct byte-pair summation with end-around carry."""
    if len(data) % 2:
        data = data + b"\x00"
    s = 0
    for i in range(0, len(data), 2):
        s += (data[i] << 8) | data[i + 1]
        s = (s & 0xFFFF) + (s >> 16)
    return (~s) & 0xFFFF
