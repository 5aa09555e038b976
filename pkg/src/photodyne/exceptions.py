"""Exception hierarchy for photodyne.

The CLI maps these onto exit codes: ConfigError -> 2, numerical guards
(TruncationError, StepSizeError) -> 3.
"""


class PhotodyneError(Exception):
    """Base class for all photodyne errors."""


class DimensionError(PhotodyneError):
    """Mismatched or invalid truncation dimensions."""


class TruncationError(PhotodyneError):
    """Basis-cutoff (leakage) guard tripped."""


class StepSizeError(PhotodyneError):
    """Per-step jump probability exceeded the smallness cap."""


class DomainError(PhotodyneError):
    """Input outside the mathematical domain of a closed form."""


class DivergenceError(DomainError):
    """A closed-form expectation diverges for these arguments."""


class UndefinedConditionalError(PhotodyneError):
    """Conditional expectation requested on a zero conditional state."""


class ConfigError(PhotodyneError):
    """Invalid run configuration or CLI arguments."""


class ConsistencyError(PhotodyneError):
    """Two internally redundant evaluation paths disagreed."""
