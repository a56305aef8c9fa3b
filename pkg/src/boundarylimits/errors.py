"""Shared exception types."""


class DomainError(ValueError):
    """An argument is outside the mathematical domain of an operation."""


class NonConvergenceError(RuntimeError):
    """An iterative solver failed to reach consensus.

    Carries the competing candidates so callers can inspect what the
    solver saw.
    """

    def __init__(self, message, candidates=None):
        super().__init__(message)
        self.candidates = candidates if candidates is not None else []


class SingularModelError(RuntimeError):
    """A model matrix required to be invertible is numerically singular."""

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class DegenerateSamplingError(RuntimeError):
    """Rejection sampling found no points inside the target region."""


class ConfigError(ValueError):
    """Experiment configuration failed validation.

    ``path`` identifies the offending field in the config tree.
    """

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
