"""Exception types raised across the package."""


class CurvtomoError(Exception):
    """Base class for all package errors."""


class DomainError(CurvtomoError, ValueError):
    """A field was evaluated outside the region where it is defined."""


class ShellError(CurvtomoError, ValueError):
    """The energy level does not dominate the potential on the region."""


class TrappedTrajectoryError(CurvtomoError):
    """A trajectory did not leave the domain within the travel-time budget."""

    def __init__(self, message, nodes=()):
        super().__init__(message)
        self.nodes = tuple(int(n) for n in nodes)


class DivergenceError(CurvtomoError):
    """A fixed-point or iterative solve diverged or produced non-finite values."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class FileFormatError(CurvtomoError, ValueError):
    """A binary or text file could not be parsed."""


class ConfigError(CurvtomoError, ValueError):
    """An experiment configuration is malformed or violates an invariant."""
