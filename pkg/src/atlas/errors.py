class DomainError(ValueError):
    """An input lies outside the unit hypercube the model is defined on."""


class NumericRangeError(ArithmeticError):
    """An exponential interior grew large enough to overflow double precision."""
