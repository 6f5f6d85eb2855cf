"""Exception hierarchy shared by every layer of the simulator.

Each error carries a stable ``code`` (the class name) which is what ends up
in event logs and CLI diagnostics.
"""


class OrcaError(Exception):
    """Base class for all recoverable errors raised by the framework."""

    @property
    def code(self) -> str:
        return type(self).__name__


# topology / file loading
class ParseError(OrcaError):
    pass


class ValidationError(OrcaError):
    pass


class UnknownOperator(OrcaError):
    pass


class UnknownPE(OrcaError):
    pass


class UnknownHost(OrcaError):
    pass


# runtime
class UnknownJob(OrcaError):
    pass


class AlreadyCancelled(OrcaError):
    pass


class NoHostAvailable(OrcaError):
    pass


class InvalidStateTransition(OrcaError):
    pass


# event scope / delivery
class IllegalFilterForKind(OrcaError):
    pass


class EmptyKey(OrcaError):
    pass


class DuplicateKey(OrcaError):
    pass


class NonPositivePeriod(OrcaError):
    pass


# orchestrator / dependencies
class UnmanagedJob(OrcaError):
    pass


class UnknownConfig(OrcaError):
    pass


class AlreadySubmitted(OrcaError):
    pass


class DuplicateId(OrcaError):
    pass


class UnknownApplication(OrcaError):
    pass


class CycleError(OrcaError):
    pass


class NegativeUptime(OrcaError):
    pass


class StarvationError(OrcaError):
    pass


class NotRunning(OrcaError):
    pass


class NotPendingCancel(OrcaError):
    pass


class ScenarioError(OrcaError):
    pass
