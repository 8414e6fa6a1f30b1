"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration/data/format problems
exit with 2, numeric failures (divergence, non-finite gradients) with 3.
"""


class RtdaError(Exception):
    pass


class ShapeError(RtdaError):
    """Tensor dimensions do not conform."""


class ConfigError(RtdaError):
    """Invalid configuration. ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class DataError(RtdaError):
    """Bad dataset content (labels out of range, malformed files, ...)."""


class FormatError(RtdaError):
    """Corrupt or unsupported serialized tensor data."""


class UsageError(RtdaError):
    """An operation was called in a way its contract forbids."""


class NumericError(RtdaError):
    """Non-finite values where finite ones are required."""


class TrainingDivergence(NumericError):
    def __init__(self, method, seed, epoch):
        self.method = method
        self.seed = seed
        self.epoch = epoch
        super().__init__(
            f"non-finite loss for method={method} seed={seed} at epoch {epoch}"
        )
