"""Exception hierarchy shared across the package."""


class ParleyError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ParleyError):
    """Tensor shapes or dimensions do not satisfy an operation's contract."""


class GraphError(ParleyError):
    """Autodiff graph misuse, e.g. backward on a non-scalar."""


class NumericError(ParleyError):
    """Non-finite values where finite ones are required."""


class VocabError(ParleyError):
    """Vocabulary construction or lookup failure."""


class SchemaError(ParleyError):
    """Malformed data file; message carries the offending line number."""


class DataError(ParleyError):
    """Pipeline contract violation (batch budget, id ranges, ...)."""


class ConfigError(ParleyError):
    """Invalid or inconsistent configuration."""


class CheckpointError(ParleyError):
    """Checkpoint file does not match the configured model."""
