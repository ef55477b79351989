"""Instructions: the tagged output commands processors emit.

Instructions only describe work for the target; emitting one has no effect on
protocol state.  The simulator executes them after the chain returns.
"""

from dataclasses import dataclass, field

START = "start"
RESTART = "restart"
STOP = "stop"


@dataclass
class NewOrderedData:
    kind = "new_ordered_data"
    direction: str  # reassembly.RX or reassembly.TX
    uid: object
    size: object = None  # byte count, or None for an unbounded stream
    addr: object = None


@dataclass
class AddRxSegment:
    kind = "add_rx_data_seg"
    uid: object
    offset: int
    data: bytes


@dataclass
class RxFlushAndNotify:
    kind = "rx_flush_and_notify"
    uid: object
    length: int
    addr: object = None


@dataclass
class AddTxData:
    kind = "add_tx_data"
    uid: object
    data: bytes


@dataclass
class TxFlush:
    kind = "tx_flush"
    uid: object
    length: int


@dataclass
class PktGen:
    kind = "pkt_gen"
    flow: tuple  # (local addr, local port, remote addr, remote port)
    blueprint: object
    srule_id: int = None
    queue: object = None  # QueueRef; None means the scheduler root, queue 0
    priority: int = 0
    tags: tuple = ()  # free-form markers the simulator counts (e.g. "retx")


@dataclass
class SetQueueParam:
    kind = "set_queue_param"
    queue: object
    param: str  # "rate" | "priority" | "weight"
    value: object


@dataclass
class TimerOp:
    kind = "timer_op"
    flow: tuple
    tid: str
    op: str  # START | RESTART | STOP
    duration: int = None
    keys: dict = None  # context-lookup keys for the expiry event (default: declaring spec -> flow)


@dataclass
class NewCtx:
    kind = "new_ctx"
    spec_name: str
    key: tuple
    init: dict = field(default_factory=dict)


@dataclass
class DelCtx:
    kind = "del_ctx"
    spec_name: str
    key: tuple


@dataclass
class Notify:
    kind = "notify"
    flow: tuple
    payload: dict = field(default_factory=dict)


def kind_sequence(instructions):
    """Instruction kinds in emission order (outcome-class signature)."""
    return tuple(i.kind for i in instructions)
