"""Exception types shared across the package.

The CLI maps these onto distinct exit codes (config = 2, data = 3,
numeric = 4), so anything raised toward a user should derive from one
of the classes below.
"""


class VoicemorphError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(VoicemorphError, ValueError):
    """An array input violates a documented shape or range precondition."""


class ConfigError(VoicemorphError, ValueError):
    """Invalid configuration value, flag, or config-file entry."""


class DataError(VoicemorphError):
    """A data file or corpus is missing, unreadable, or malformed."""


class CorpusError(DataError):
    """A corpus does not satisfy the requirements of the requested task."""


class CheckpointError(DataError):
    """Checkpoint is truncated, has the wrong version, or does not match
    the architecture it is being loaded into."""


class NumericError(VoicemorphError, ArithmeticError):
    """Training or evaluation produced a non-finite value."""


class SimilarityError(VoicemorphError, ValueError):
    """Cosine similarity is undefined for the given inputs."""
