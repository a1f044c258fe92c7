"""Exception hierarchy shared by all solvers and the CLI."""


class HPSError(Exception):
    """Base class for errors raised by hpsmeta."""


class ArgumentError(HPSError, ValueError):
    """Invalid argument: bad shape, out-of-range rank, non-finite entries."""


class DegeneracyError(HPSError, ArithmeticError):
    """A quantity needed for the computation vanished (rank deficiency, zero variance)."""


class DivergenceError(HPSError, ArithmeticError):
    """An iterative solver produced a non-finite iterate.

    ``theta`` and ``basis`` hold the last finite iterate (if any) so callers
    can still report metrics for it.
    """

    def __init__(self, message, iteration, theta=None, basis=None):
        super().__init__(message)
        self.iteration = iteration
        self.theta = theta
        self.basis = basis


class DataError(HPSError):
    """Malformed input table or preprocessing schema."""


class ConfigError(HPSError):
    """Malformed experiment configuration."""
