"""Exception hierarchy shared by all subsystems."""

from __future__ import annotations


class ShuffleError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(ShuffleError, ValueError):
    pass


class SerializationError(ShuffleError, ValueError):
    pass


class DecodeError(ShuffleError, ValueError):
    pass


class PlanError(ShuffleError, ValueError):
    pass


class ContractViolation(ShuffleError, RuntimeError):
    pass


class OversizeTupleError(ShuffleError):
    pass


class ShuffleStallError(ShuffleError):
    """A message pool stayed exhausted past its backpressure timeout."""


class RoutingError(ShuffleError):
    pass


class WouldBlock(ShuffleError):
    pass


class StartupError(ShuffleError):
    pass


class TransportFault(ShuffleError):
    def __init__(self, message: str, peer: int | None = None):
        super().__init__(message)
        self.peer = peer


class QueryError(ShuffleError):
    def __init__(self, message: str, node: int | None = None):
        super().__init__(message)
        self.node = node


class OracleMismatch(ShuffleError):
    pass
