"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """Invalid configuration, parameter or precondition."""


class ShapeError(ValueError):
    """Array dimensions do not agree."""


class FormatError(ValueError):
    """Malformed file contents (bad magic number, bad header)."""


class ConsistencyError(ValueError):
    """Two related inputs disagree, e.g. image and label counts."""


class TruncatedFileError(OSError):
    """A binary file ended before its header said it would."""


class UndefinedSimilarityError(ValueError):
    """Cosine similarity requested for a zero vector."""
