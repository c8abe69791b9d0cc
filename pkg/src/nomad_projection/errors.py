"""Exception hierarchy shared by every stage of the pipeline."""


class NomadError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(NomadError, ValueError):
    """An argument is outside its allowed range."""


class DimensionError(NomadError, ValueError):
    """Array shapes or file sizes do not agree."""


class ValidationError(NomadError, ValueError):
    """Input data violates an invariant (e.g. contains NaN or Inf)."""


class SchemaError(NomadError, ValueError):
    """A CSV file is missing required columns."""


class ConfigurationError(NomadError, ValueError):
    """A training or loss configuration cannot be evaluated."""


class DegenerateInputError(NomadError, ValueError):
    """Input has no variance to project."""


class SizeError(NomadError, ValueError):
    """An exhaustive enumeration would exceed its budget."""


class ConsistencyError(NomadError, RuntimeError):
    """Internal bookkeeping disagrees with itself (e.g. shard coverage)."""


class DivergenceError(NomadError, ArithmeticError):
    """Optimisation produced non-finite or runaway coordinates."""

    def __init__(self, message: str, epoch: int | None = None, head: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.head = head
