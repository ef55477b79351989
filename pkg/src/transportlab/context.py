"""Flow contexts: the persistent state records protocols declare.

A ContextSpec names the fields, timers, and sliding windows a protocol wants
the target to keep at some granularity (per flow, per group of flows, or one
global record).  Context instances give attribute access to those fields and
reject names that were never declared, so processor typos fail loudly.
"""

import copy
from dataclasses import dataclass, field

from .errors import DeployError, MissingContext
from .window import DEFAULT_CAPACITY, SlidingWindow

PER_FLOW = "flow"
GROUP = "group"
GLOBAL = "global"


@dataclass(frozen=True)
class ContextSpec:
    name: str
    granularity: str = PER_FLOW
    key_arity: int = 4
    fields: tuple = ()    # (name, semantic type, initial value)
    timers: tuple = ()    # (timer id, expiry event type)
    windows: tuple = ()   # (window name, capacity)

    def __post_init__(self):
        if self.granularity not in (PER_FLOW, GROUP, GLOBAL):
            raise DeployError(f"context {self.name}: unknown granularity {self.granularity!r}")
        if self.granularity == GLOBAL and self.key_arity != 0:
            raise DeployError(f"context {self.name}: global contexts take an empty key")
        names = [f[0] for f in self.fields] + [w[0] for w in self.windows]
        if len(set(names)) != len(names):
            raise DeployError(f"context {self.name}: duplicate field names")

    def instantiate(self, init=None):
        return Context(self, init or {})


class Context:
    def __init__(self, spec, init):
        object.__setattr__(self, "_spec", spec)
        values = {}
        for name, _semantic, default in spec.fields:
            values[name] = copy.deepcopy(default)
        windows = {}
        for name, capacity in spec.windows:
            windows[name] = SlidingWindow(capacity or DEFAULT_CAPACITY)
        object.__setattr__(self, "_values", values)
        object.__setattr__(self, "_windows", windows)
        for k, v in init.items():
            if k in windows:
                windows[k].reset(v)  # init value = initial head
            elif k in values:
                values[k] = v
            else:
                raise AttributeError(f"context {spec.name} has no field {k!r}")

    @property
    def spec(self):
        return self._spec

    def __getattr__(self, name):
        values = object.__getattribute__(self, "_values")
        if name in values:
            return values[name]
        windows = object.__getattribute__(self, "_windows")
        if name in windows:
            return windows[name]
        raise AttributeError(f"context {self._spec.name} has no field {name!r}")

    def __setattr__(self, name, value):
        values = object.__getattribute__(self, "_values")
        if name not in values:
            raise AttributeError(f"context {self._spec.name} has no field {name!r}")
        values[name] = value

    def clone(self):
        return copy.deepcopy(self)

    def snapshot(self):
        """Plain-data view of fields and window heads, for trace and tests."""
        out = dict(self._values)
        for name, w in self._windows.items():
            out[name] = ("window", w.head, w.capacity)
        return out

    def __eq__(self, other):
        if not isinstance(other, Context):
            return NotImplemented
        return (self._spec.name == other._spec.name
                and self._values == other._values
                and {n: (w.head, w._bits) for n, w in self._windows.items()}
                == {n: (w.head, w._bits) for n, w in other._windows.items()})


class ContextBundle:
    """Contexts resolved for one event, by spec name.

    Accessing an absent context raises MissingContext; chains that create
    their context instead should check has() and emit a new_ctx instruction.
    """

    def __init__(self, contexts):
        object.__setattr__(self, "_contexts", dict(contexts))

    def has(self, name):
        return self._contexts.get(name) is not None

    def __getattr__(self, name):
        ctx = object.__getattribute__(self, "_contexts").get(name)
        if ctx is None:
            raise MissingContext(f"no live context {name!r} for this event")
        return ctx

    def get(self, name):
        return self._contexts.get(name)

    def items(self):
        return self._contexts.items()


class Scratchpad:
    """Per-event transient record; reset to declared defaults for each chain."""

    def __init__(self, layout):
        object.__setattr__(self, "_values", {k: copy.deepcopy(v) for k, v in layout.items()})

    def __getattr__(self, name):
        values = object.__getattribute__(self, "_values")
        try:
            return values[name]
        except KeyError:
            raise AttributeError(f"scratchpad has no field {name!r}") from None

    def __setattr__(self, name, value):
        values = object.__getattribute__(self, "_values")
        if name not in values:
            raise AttributeError(f"scratchpad has no field {name!r}")
        values[name] = value
