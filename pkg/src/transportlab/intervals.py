"""Sorted disjoint byte-interval lists (coverage accounting for protocols)."""


def insert_interval(intervals, lo, hi):
    """Insert [lo, hi) in place; returns the number of newly covered bytes."""
    added = hi - lo
    out = []
    i = 0
    while i < len(intervals) and intervals[i][1] < lo:
        out.append(intervals[i])
        i += 1
    while i < len(intervals) and intervals[i][0] <= hi:
        a, b = intervals[i]
        added -= max(0, min(b, hi) - max(a, lo))
        lo = min(lo, a)
        hi = max(hi, b)
        i += 1
    out.append((lo, hi))
    out.extend(intervals[i:])
    intervals[:] = out
    return max(0, added)


def contiguous_from_zero(intervals):
    return intervals[0][1] if intervals and intervals[0][0] == 0 else 0
