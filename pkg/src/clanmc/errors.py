"""Exception types shared across the package."""


class ClanMCError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ClanMCError):
    """Invalid configuration, parameter value or config file."""


class DomainError(ClanMCError, ValueError):
    """Argument outside an operation's stated domain."""


class NumericalFailureError(ClanMCError):
    """Overflow, or a result too unreliable to report."""


class UnreliableRatioError(NumericalFailureError):
    """Ratio denominator statistically indistinguishable from zero."""


class AssumptionViolationError(ClanMCError):
    """Estimator requested under assumptions the environment law violates."""
