"""Exception hierarchy shared across the toolkit."""


class ParleError(Exception):
    """Base class for all toolkit errors."""


class InvalidHyperparameter(ParleError):
    """A hyper-parameter value violates its admissible range."""


class DimensionMismatch(ParleError):
    """Operands have incompatible lengths or layer shapes."""


class NonFiniteError(ParleError):
    """A numeric result contains NaN or Inf."""


class DivergenceError(ParleError):
    """An optimizer produced a non-finite loss or parameter vector.

    The message names where the blow-up happened (step, cycle, replica).
    """


class ConsistencyError(ParleError):
    """Internal bookkeeping violated (misaligned counters, mismatched runs)."""


class DataFormatError(ParleError):
    """A dataset file is malformed (bad magic, truncation, count mismatch)."""


class ConfigError(ParleError):
    """A run configuration is missing, unreadable, or violates the schema."""


class UndefinedSimilarity(ParleError):
    """Cosine similarity requested against a zero-norm layer."""
