"""Event dispatch: run one event's processor chain and collect instructions.

Processors run strictly in chain order, sharing one instruction list and one
scratchpad.  A processor failure aborts the remainder of the chain and the
whole event's instruction list is discarded (the raised ChainError carries
the cause); the one sanctioned cross-processor signal is a scratchpad flag.
"""

from dataclasses import dataclass

from .context import Scratchpad
from .errors import ChainError, MissingContext, UnknownEventType


@dataclass(frozen=True)
class DispatchTable:
    entries: dict  # event type name -> tuple of processor ids

    def chain_for(self, type_name):
        try:
            return self.entries[type_name]
        except KeyError:
            raise UnknownEventType(f"no chain registered for event {type_name!r}") from None


def dispatch(handle, event, ctxs, pad=None):
    """Run the chain registered for event.type_name.

    Contexts are mutated in place by the processors; the returned list of
    instructions is purely descriptive and executing it elsewhere never feeds
    back into the contexts.
    """
    chain = handle.dispatch.chain_for(event.type_name)
    if pad is None:
        pad = Scratchpad(handle.scratch)
    out = []
    for pid in chain:
        proc = handle.processors[pid]
        try:
            proc(event, ctxs, pad, out)
        except MissingContext:
            raise
        except Exception as exc:  # abort the event, discard its instructions
            raise ChainError(pid, exc) from exc
    return out
