"""Built-in sliding-window type.

Tracks one boolean flag per sequence position in [head, head + capacity).
Positions below head are retired: they read as set and cannot be changed.
Head only moves forward.  Sequence numbers wrap at 2^32 (serial arithmetic),
so the window works unchanged across the wrap point as long as capacity is
well below 2^31.
"""

from .errors import RangeBeyondWindow
from .seqnum import SEQ_MOD, seq_le, seq_lt, seq_sub

DEFAULT_CAPACITY = 65536
_HALF = 1 << 31


class SlidingWindow:
    __slots__ = ("head", "capacity", "_bits")

    def __init__(self, capacity: int = DEFAULT_CAPACITY, head: int = 0):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.head = head % SEQ_MOD
        self.capacity = capacity
        self._bits = 0  # bit i <-> position head + i

    def reset(self, head: int) -> None:
        """Rebase the window (e.g. once the peer's initial seq is known)."""
        self.head = head % SEQ_MOD
        self._bits = 0

    def mark(self, lo: int, hi: int, flag: bool = True) -> None:
        """Set every flag in [lo, hi) to `flag`; positions below head are ignored.

        Raises RangeBeyondWindow if hi lies past head + capacity, which the
        protocol should treat as a receive-window overflow.
        """
        if not seq_le(lo, hi):
            raise ValueError("lo must not exceed hi")
        if lo == hi or seq_le(hi, self.head):
            return
        end = seq_sub(hi, self.head)
        if end > self.capacity:
            raise RangeBeyondWindow(
                f"mark up to {hi} exceeds window head={self.head} cap={self.capacity}")
        start = 0 if seq_lt(lo, self.head) else seq_sub(lo, self.head)
        span = (1 << end) - (1 << start)
        if flag:
            self._bits |= span
        else:
            self._bits &= ~span

    def first(self, flag: bool = True):
        """Smallest position >= head whose flag equals `flag`, or None."""
        if flag:
            bits = self._bits
        else:
            bits = ~self._bits & ((1 << self.capacity) - 1)
        if bits == 0:
            return None
        off = (bits & -bits).bit_length() - 1
        return (self.head + off) % SEQ_MOD

    def get(self, pos: int) -> bool:
        off = seq_sub(pos, self.head)
        if off > _HALF:
            return True  # behind head: retired positions read as set
        if off >= self.capacity:
            return False
        return bool(self._bits >> off & 1)

    def slide(self) -> int:
        """Advance head to the first unset position, retiring flags below it.

        Returns the new head.  A completely set window advances by the full
        capacity.
        """
        unset = ~self._bits & ((1 << self.capacity) - 1)
        if unset == 0:
            k = self.capacity
        else:
            k = (unset & -unset).bit_length() - 1
        self._bits >>= k
        self.head = (self.head + k) % SEQ_MOD
        return self.head
