"""Exception types shared across the package."""


class RwreError(Exception):
    """Base class for all package errors."""


class SpecError(RwreError, ValueError):
    """An environment law or experiment config is invalid."""


class BudgetExceeded(RwreError, MemoryError):
    """A request needs more sites or steps than the configured budget."""


class NotErgodic(RwreError):
    """No stationary distribution exists for the requested environment."""


class TailUnbounded(RwreError):
    """The truncated tail could not be bounded below the tolerance."""


class Divergent(RwreError):
    """A series that should converge showed no decay within the probe horizon."""


class DegenerateWindow(RwreError, ValueError):
    """A regression window holds too few points."""


class ResidualOverflow(RwreError, OverflowError):
    """A quantity is too large to exponentiate for an absolute residual."""
