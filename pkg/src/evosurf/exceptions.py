"""Error classes raised by the solver stack."""


class EvosurfError(Exception):
    """Base class for all package errors."""


class ConfigurationError(EvosurfError, ValueError):
    pass


class DomainError(EvosurfError, ValueError):
    """A field was evaluated where it is not defined."""


class OutOfDomainError(EvosurfError, ValueError):
    """A point lies outside the background box."""


class GeometryError(EvosurfError):
    """The discrete surface is empty or touches the box boundary."""


class SolverFailure(EvosurfError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InternalError(EvosurfError, RuntimeError):
    pass
