"""Exception types shared across the package."""


class GeotrunkError(Exception):
    """Base class for all package errors."""


class DimensionError(GeotrunkError, ValueError):
    """Operands have incompatible shapes; the message names both."""


class GraphError(GeotrunkError, RuntimeError):
    """Autodiff misuse: non-scalar loss, consumed tape, cross-tape tensors."""


class DegenerateMaskError(GeotrunkError, ValueError):
    """A mask excluded every element an operation needs at least one of."""


class ConfigurationError(GeotrunkError, ValueError):
    """A model or run configuration violates its contract."""


class ValidationError(GeotrunkError, ValueError):
    """Input data violates a documented precondition."""


class DegenerateGeometryError(ValidationError):
    """A geometry has numerically no interior to sample."""


class DegenerateBatchError(GeotrunkError, ValueError):
    """A batch contains no unmasked points to average over."""


class OracleError(GeotrunkError, RuntimeError):
    """A reference solver failed to converge; carries the residual it reached."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class TrainingError(GeotrunkError, RuntimeError):
    """Training aborted; the message says at which step and why."""


class RecordError(GeotrunkError, ValueError):
    """A binary case record is malformed or truncated."""


class SchemaError(GeotrunkError, ValueError):
    """A config file failed schema validation; the message cites section.key."""
