"""Exception types shared across the package."""


class PipesgdError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(PipesgdError, ValueError):
    """Buffer or tensor dimensions do not match what the operation needs."""


class InputError(PipesgdError, ValueError):
    """Caller-supplied data is malformed (empty batch, bad CSV row, ...)."""


class ConfigError(PipesgdError, ValueError):
    """A configuration value violates its documented constraints."""


class RangeError(PipesgdError, ValueError):
    """A byte range or notification id falls outside its segment."""


class RoutingError(PipesgdError, ValueError):
    """A message names a rank that does not exist in this world."""


class TreeError(PipesgdError, ValueError):
    """A rank tree violates one of its structural invariants."""


class TransportError(PipesgdError, RuntimeError):
    """The transport layer failed (lost peer, closed socket, timeout)."""


class ProtocolError(PipesgdError, RuntimeError):
    """The training protocol observed an impossible state (duplicate
    arrival, stale notification value, deadlocked finalize)."""


class VerificationError(PipesgdError, RuntimeError):
    """A run did not reproduce the sequential reference result."""


class UsageError(PipesgdError, ValueError):
    """Command line arguments are inconsistent or incomplete."""


class FormatError(PipesgdError, ValueError):
    """A serialized artifact (timeline CSV, checkpoint) is malformed."""
