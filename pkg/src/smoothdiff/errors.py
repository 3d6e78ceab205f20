"""Exception types shared across the package."""


class ConditioningError(RuntimeError):
    """A covariance factorization or innovation variance collapsed numerically."""


class FittingError(RuntimeError):
    """Parameter estimation cannot proceed on the given data."""
