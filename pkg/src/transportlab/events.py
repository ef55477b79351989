"""Events: the single input type for protocol programs."""

from dataclasses import dataclass, field

APPLICATION = "application"
NETWORK = "network"
TIMER = "timer"


@dataclass
class Event:
    kind: str
    type_name: str
    keys: dict = field(default_factory=dict)   # context spec name -> lookup key tuple
    meta: dict = field(default_factory=dict)
    payload: bytes = None                      # network events carrying data only
    time: int = 0                              # sim time ns when delivered

    def key_for(self, spec_name):
        return self.keys.get(spec_name)
