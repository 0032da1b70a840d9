"""Exception types shared across the package."""


class InvalidConfigError(ValueError):
    """Configuration that cannot satisfy documented invariants."""


class ContractError(ValueError):
    """Arguments violate an operation's preconditions (shape, range, size)."""


class OutOfBoundsError(InvalidConfigError):
    """A shape does not fit inside the requested canvas."""


class CorruptArchiveError(RuntimeError):
    """Array archive failed an integrity check (manifest, shape, checksum)."""


class CheckpointNotFoundError(FileNotFoundError):
    """Requested checkpoint does not exist or is incomplete."""


class TrainingDivergedError(RuntimeError):
    """A loss component became non-finite during training.

    Carries the offending loss breakdown so callers can emit a diagnostic
    record before exiting.
    """

    def __init__(self, message: str, breakdown: dict | None = None):
        super().__init__(message)
        self.breakdown = breakdown or {}


class UndefinedCorrelationError(ValueError):
    """Rank correlation requested against a constant vector."""


class UndefinedMetricError(ValueError):
    """Metric undefined for the given inputs (e.g. no active latent dims)."""
