"""Exception hierarchy shared across the package."""


class SolisError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SolisError, ValueError):
    """Invalid configuration, unbound input, or bad hyperparameter."""


class UsageError(SolisError, ValueError):
    """An operation was called with arguments violating its precondition."""


class DomainError(SolisError, ValueError):
    """A quantity is undefined at the given point (e.g. canonical form with k <= 0)."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class NumericalError(SolisError, ArithmeticError):
    """A NaN or Inf was produced where finite values are required."""


class IntegrationError(NumericalError):
    """An ODE integration step produced a non-finite or divergent state."""

    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


class RankDeficiencyError(SolisError, ArithmeticError):
    """A linear system expected to be invertible is singular."""


class ParseError(SolisError, ValueError):
    """A dataset or checkpoint file is malformed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ArtifactMismatchError(SolisError):
    """A checkpoint and a dataset were produced by incompatible configurations."""


class TrainingAborted(NumericalError):
    """Training hit a non-finite loss; carries the last good checkpoint state."""

    def __init__(self, message, checkpoint=None, epoch=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.epoch = epoch
