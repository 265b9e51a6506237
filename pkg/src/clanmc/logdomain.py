"""Log-domain carrier for nonnegative reals.

Survival functionals of long walks span e^{+-O(sqrt(n))}, far beyond double
range, so every product and ratio is kept as a log magnitude and only final
estimates exit to linear scale.  Exact zero is a first-class state, not a
large negative log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

_LOG_TINY = -700.0  # below this, exp underflows and 1 - e^{-t} ~ t to full precision
_LOG2 = math.log(2.0)


def log1m_exp_neg(log_t: float) -> float:
    """log(1 - exp(-t)) for t = exp(log_t) > 0, stable over the whole range.

    For tiny t the result is ~ log_t; for large t it approaches 0 from below.
    """
    if log_t < _LOG_TINY:
        return log_t
    t = math.exp(log_t)
    if t > _LOG2:
        return math.log1p(-math.exp(-t))
    return math.log(-math.expm1(-t))


def log1m_exp_neg_vec(log_t: np.ndarray) -> np.ndarray:
    """Vectorized log1m_exp_neg."""
    log_t = np.asarray(log_t, dtype=float)
    out = np.empty_like(log_t)
    tiny = log_t < _LOG_TINY
    out[tiny] = log_t[tiny]
    rest = ~tiny
    with np.errstate(over="ignore"):
        t = np.exp(log_t[rest])
    big = t > _LOG2
    r = np.empty_like(t)
    r[big] = np.log1p(-np.exp(-t[big]))
    r[~big] = np.log(-np.expm1(-t[~big]))
    out[rest] = r
    return out


@dataclass(frozen=True)
class LogValue:
    """A nonnegative real stored as log magnitude plus an exact-zero flag."""

    log: float
    is_zero: bool = False

    @staticmethod
    def zero() -> "LogValue":
        return LogValue(-math.inf, True)

    @staticmethod
    def from_log(log_magnitude: float) -> "LogValue":
        return LogValue(float(log_magnitude), False)

    @staticmethod
    def from_linear(value: float) -> "LogValue":
        if value < 0:
            raise DomainError(f"LogValue represents nonnegative reals only, got {value}")
        if value == 0:
            return LogValue.zero()
        return LogValue(math.log(value), False)

    @property
    def value(self) -> float:
        """Linear-scale value; may underflow to 0.0 or overflow to inf."""
        if self.is_zero:
            return 0.0
        return math.exp(self.log)

    def __mul__(self, other: "LogValue") -> "LogValue":
        if self.is_zero or other.is_zero:
            return LogValue.zero()
        return LogValue(self.log + other.log, False)

    def __truediv__(self, other: "LogValue") -> "LogValue":
        if other.is_zero:
            raise DomainError("division by exact-zero LogValue")
        if self.is_zero:
            return LogValue.zero()
        return LogValue(self.log - other.log, False)

    def __add__(self, other: "LogValue") -> "LogValue":
        if self.is_zero:
            return other
        if other.is_zero:
            return self
        # max-shifted summation, exact to working precision
        return LogValue(float(np.logaddexp(self.log, other.log)), False)
