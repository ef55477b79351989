from transportlab.seqnum import seq_add, seq_ge, seq_gt, seq_le, seq_lt, seq_max, seq_sub

TOP = (1 << 32) - 1


def test_plain_ordering():
    assert seq_lt(1, 2)
    assert seq_le(2, 2)
    assert seq_gt(3, 2)
    assert seq_ge(3, 3)
    assert not seq_lt(5, 5)


def test_wraparound_ordering():
    assert seq_lt(TOP, 0)
    assert seq_lt(TOP - 10, 5)
    assert seq_gt(5, TOP - 10)
    assert seq_max(TOP, 3) == 3


def test_add_sub_wrap():
    assert seq_add(TOP, 1) == 0
    assert seq_add(TOP, 10) == 9
    assert seq_sub(9, TOP) == 10
    assert seq_sub(5, 5) == 0


def test_distance_is_forward():
    # distance from an older point forward to a newer one, across the wrap
    old = TOP - 100
    new = seq_add(old, 250)
    assert seq_sub(new, old) == 250
