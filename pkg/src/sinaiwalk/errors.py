"""Exception types shared across the package."""


class InvalidLawError(ValueError):
    """Environment law parameter outside (0, 1/2)."""


class DomainError(ValueError):
    """Arguments violate an operation's precondition (ordering, ranges)."""


class BudgetError(RuntimeError):
    """A scan or window needed more sites than its budget allows."""
