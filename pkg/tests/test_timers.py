from transportlab.timers import TimerHub

F1 = (1, 10, 2, 20)
F2 = (1, 10, 3, 30)


def test_start_sets_deadline():
    hub = TimerHub()
    hub.start(F1, "rto", now=100, duration=50)
    assert hub.deadline(F1, "rto") == 150


def test_start_on_active_restarts():
    hub = TimerHub()
    hub.start(F1, "rto", 0, 100)
    hub.start(F1, "rto", 50, 100)
    assert hub.deadline(F1, "rto") == 150
    assert hub.advance(120) == []


def test_stop_inactive_is_noop():
    hub = TimerHub()
    hub.stop(F1, "rto")
    assert not hub.active(F1, "rto")


def test_zero_duration_fires_at_next_advance():
    hub = TimerHub()
    hub.start(F1, "rto", 10, 0)
    assert [t[2] for t in hub.advance(10)] == ["rto"]


def test_advance_empty():
    assert TimerHub().advance(1000) == []


def test_simultaneous_expiry_tie_order():
    hub = TimerHub()
    hub.start(F2, "b", 0, 100)
    hub.start(F1, "z", 0, 100)
    hub.start(F1, "a", 0, 100)
    out = hub.advance(100)
    assert out == [(100, F1, "a"), (100, F1, "z"), (100, F2, "b")]


def test_restart_cancels_old_deadline():
    hub = TimerHub()
    hub.start(F1, "rto", 0, 100)
    hub.start(F1, "rto", 90, 100)
    assert hub.advance(100) == []
    assert hub.advance(190) == [(190, F1, "rto")]


def test_expiry_emitted_exactly_once():
    hub = TimerHub()
    hub.start(F1, "rto", 0, 10)
    assert len(hub.advance(10)) == 1
    assert hub.advance(1000) == []


def test_next_deadline():
    hub = TimerHub()
    assert hub.next_deadline() is None
    hub.start(F1, "a", 0, 300)
    hub.start(F1, "b", 0, 200)
    assert hub.next_deadline() == 200
