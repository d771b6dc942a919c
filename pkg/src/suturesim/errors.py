"""Exception taxonomy shared across the simulator."""


class SutureSimError(Exception):
    """Base class for all simulator errors."""


class InvalidArgumentError(SutureSimError, ValueError):
    """An argument violated an operation's precondition."""


class DegenerateSignalError(InvalidArgumentError):
    """Signal cannot be normalized (all-zero)."""


class NoSurfaceFoundError(SutureSimError):
    """No sample reached the surface threshold during template extraction."""


class InsufficientDepthError(SutureSimError):
    """Fewer than one template span of samples remain past the surface."""


class SensorFaultError(SutureSimError):
    """The acquisition source failed (distinct from a failed edge search)."""


class ConnectionLostError(SutureSimError):
    """A device or service endpoint is disconnected; retry after reconnect."""


class NoEndpointError(SutureSimError):
    """Service call addressed to an unregistered endpoint."""


class InvalidStateError(SutureSimError):
    """Operation not legal in the current device state."""


class IllegalTransitionError(SutureSimError):
    """Event not legal in the current workflow phase; state is preserved."""


class InsufficientDataError(SutureSimError):
    """Too few observations to compute the requested statistic."""


class UndefinedMetricError(SutureSimError):
    """Metric undefined for this input (e.g. COV%% of a zero-mean sample)."""


class TrainingFailureError(SutureSimError):
    """Classifier training diverged; carries diagnostics."""


class ConfigError(SutureSimError):
    """Malformed configuration file or overrides."""
