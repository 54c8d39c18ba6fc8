"""Exception types raised by the library."""


class DomainError(ValueError):
    """An argument lies outside the domain where a quantity is defined."""


class ConfigError(ValueError):
    """A scenario configuration failed validation."""


class RegularityError(ValueError):
    """Pointwise observation requested for a signal that is not continuous in space."""


class GridMismatchError(ValueError):
    """Inputs were produced on different time grids or observation layouts."""


class ConvergenceError(RuntimeError):
    """A fixed-point iteration did not reach its tolerance."""

    def __init__(self, message, last_gap, iterations):
        super().__init__(message)
        self.last_gap = last_gap
        self.iterations = iterations
