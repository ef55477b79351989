"""32-bit serial-number (wrap-around) sequence arithmetic.

Comparisons follow the usual serial rule: a < b iff (b - a) mod 2^32 lies in
(0, 2^31).  Distances are taken mod 2^32, so callers must know which side is
"ahead" (use the comparisons first).
"""

SEQ_MOD = 1 << 32
_HALF = 1 << 31


def seq_add(a: int, n: int) -> int:
    return (a + n) % SEQ_MOD


def seq_sub(a: int, b: int) -> int:
    """Distance from b forward to a, mod 2^32."""
    return (a - b) % SEQ_MOD


def seq_lt(a: int, b: int) -> bool:
    d = (b - a) % SEQ_MOD
    return 0 < d < _HALF


def seq_le(a: int, b: int) -> bool:
    return a == b or seq_lt(a, b)


def seq_gt(a: int, b: int) -> bool:
    return seq_lt(b, a)


def seq_ge(a: int, b: int) -> bool:
    return a == b or seq_lt(b, a)


def seq_max(a: int, b: int) -> int:
    return a if seq_ge(a, b) else b

