"""Per-flow timer registry with deterministic expiry order."""


class TimerHub:
    def __init__(self):
        self._deadlines = {}  # (flow key, timer id) -> deadline ns
        self._keys = {}       # (flow key, timer id) -> expiry event lookup keys

    def start(self, flow, tid, now, duration, keys=None):
        """Start or restart: an active timer is simply re-armed."""
        self._deadlines[(flow, tid)] = now + duration
        if keys is not None:
            self._keys[(flow, tid)] = keys

    def stop(self, flow, tid):
        self._deadlines.pop((flow, tid), None)
        self._keys.pop((flow, tid), None)

    def active(self, flow, tid):
        return (flow, tid) in self._deadlines

    def deadline(self, flow, tid):
        return self._deadlines.get((flow, tid))

    def next_deadline(self):
        return min(self._deadlines.values()) if self._deadlines else None

    def advance(self, now):
        """Expire every deadline <= now; returns [(deadline, flow, tid)] sorted
        by (deadline, flow key, timer id)."""
        due = [(d, flow, tid) for (flow, tid), d in self._deadlines.items() if d <= now]
        due.sort()
        out = []
        for d, flow, tid in due:
            del self._deadlines[(flow, tid)]
            out.append((d, flow, tid, self._keys.pop((flow, tid), None)))
        return out
