"""Sinai's walk: random environments, exact quenched formulas, valleys and local times."""

__version__ = "0.1.0"

from .environment import DEFAULT_LAW, Environment, EnvironmentLaw, law_constants
from .errors import BudgetError, DomainError, InvalidLawError

__all__ = [
    "DEFAULT_LAW",
    "BudgetError",
    "DomainError",
    "Environment",
    "EnvironmentLaw",
    "InvalidLawError",
    "law_constants",
    "__version__",
]
