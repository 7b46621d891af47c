"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A config value or combination of values is unusable."""


class InsufficientIdentitiesError(ConfigurationError):
    """An operation needs more identities in a group than the data provides."""


class NumericDomainError(ValueError):
    """An input left the numeric domain an operation is defined on."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


class DegenerateSerError(ValueError):
    """Skewed error ratio is undefined because some group has zero error.

    Carries the standard deviation, which is still well defined.
    """

    def __init__(self, std):
        self.std = std
        super().__init__(f"error ratio undefined at zero error (std={std})")
