"""Exception types shared across the package.

The CLI maps these onto exit codes: parameter misuse exits 1, data and
sampling problems exit 2, numerical failures exit 3.
"""


class ParameterError(ValueError):
    """An argument or configuration value violates its contract."""


class DataFormatError(ValueError):
    """An embedding or model file is malformed or cannot be parsed."""


class SamplingError(ValueError):
    """A dataset cannot support the requested episode or split."""


class ConstraintError(ValueError):
    """A constraint set is empty or otherwise unusable."""


class NumericalError(RuntimeError):
    """A numerical invariant failed (log-det domain, lost symmetry, ...)."""


class NotPositiveDefiniteError(NumericalError):
    """A matrix required to be positive definite is not."""


class TrainingError(NumericalError):
    """Training diverged; carries the episode index where it happened."""

    def __init__(self, message: str, episode_index: int | None = None):
        super().__init__(message)
        self.episode_index = episode_index
