"""Exception hierarchy shared across the package."""


class ProxyFlowError(Exception):
    """Base class for all errors raised by proxyflow."""


class KeyNotFound(ProxyFlowError, KeyError):
    """The requested key was never stored or has been evicted."""

    def __str__(self):
        return Exception.__str__(self)


class ConnectorUnavailable(ProxyFlowError):
    """The storage medium cannot be reached or the connector is closed."""


class StorageFull(ProxyFlowError):
    """The storage medium refused a write for lack of capacity."""


class EncodeError(ProxyFlowError, TypeError):
    """An object cannot be encoded by the selected codec."""


class DecodeError(ProxyFlowError, ValueError):
    """Bytes are malformed, truncated or belong to a different codec."""


class ConfigError(ProxyFlowError, ValueError):
    """Invalid connector, engine or benchmark configuration."""


class ProtocolError(ProxyFlowError):
    """A peer sent a frame that violates the wire protocol."""


class UnknownFunction(ProxyFlowError, LookupError):
    """A task names a function missing from the registry."""


class SchedulerUnreachable(ProxyFlowError, ConnectionError):
    """The client cannot reach the scheduler."""


class TaskError(ProxyFlowError):
    """A task reached the Err terminal state."""


class BorrowAfterRelease(ProxyFlowError):
    """A borrow was requested from an ownership token already released."""
