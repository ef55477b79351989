"""Exception types raised across the framework.

Deploy-time problems derive from DeployError, runtime problems from
RuntimeFault.  The simulator logs RuntimeFaults to the trace and aborts only
the offending event; DeployErrors abort registration atomically.
"""


class TransportLabError(Exception):
    pass


# deploy-time -----------------------------------------------------------

class DeployError(TransportLabError):
    pass


class DanglingReference(DeployError):
    pass


class DuplicateContextName(DeployError):
    pass


class InvalidSchedulerComposition(DeployError):
    pass


# runtime ---------------------------------------------------------------

class RuntimeFault(TransportLabError):
    pass


class UnknownEventType(RuntimeFault):
    pass


class MissingContext(RuntimeFault):
    pass


class ChainError(RuntimeFault):
    """A processor raised mid-chain; the event's instructions are discarded."""

    def __init__(self, processor_id, cause):
        super().__init__(f"processor {processor_id!r} failed: {cause!r}")
        self.processor_id = processor_id
        self.cause = cause


class RangeBeyondWindow(RuntimeFault):
    pass


class DuplicateUid(RuntimeFault):
    pass


class UnknownUid(RuntimeFault):
    pass


class BeyondDeclaredSize(RuntimeFault):
    pass


class NotContiguous(RuntimeFault):
    pass


class RangeUnavailable(RuntimeFault):
    pass


class TrimPastEnd(RuntimeFault):
    pass


class UnknownSegRule(RuntimeFault):
    pass


class ExprError(RuntimeFault):
    pass


class UnknownQueue(RuntimeFault):
    pass


class UnsupportedParam(RuntimeFault):
    pass


class UndeclaredTimer(RuntimeFault):
    pass


class DuplicateContext(RuntimeFault):
    pass


class UnknownContext(RuntimeFault):
    pass


class UnknownFlow(RuntimeFault):
    pass


# analysis / front-end --------------------------------------------------

class DomainTooLarge(TransportLabError):
    pass


class UnknownProperty(TransportLabError):
    pass


class ConfigError(TransportLabError):
    """Scenario config problem; message starts with the offending field path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
