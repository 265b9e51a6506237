"""Exact environment-conditional clan-survival formulas.

Geometric offspring laws compose as fractional-linear maps, so the
composition of a whole stretch of generations collapses to a ratio of
exponential prefix sums of the associated walk.  This module carries both
routes: a brute-force fold over the per-generation generating functions
(the oracle) and the closed forms in log domain (the production path).

Conventions, for a walk S built from the environment X_1..X_n:
  survival complement   1 - F_{i,n}(s) = e^{-S_i} / (e^{-S_n}/(1-s) + sum_{k=i}^{n-1} e^{-S_k})
  extinction step       F_{i,n}(0)     = tail_{i+1} / tail_i,  tail_i = sum_{k=i}^{n} e^{-S_k}
  only-surviving-clan   h(s) = (1 - F_{i,n}(s)) * prod_{j != i} F_{j,n}(0), evaluated
                        as three log-domain ratios, never in linear scale.
The dual form evaluates the same expectation through the reflected walk
with j = n - i playing the role of i.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .assoc_walk import WalkFunctionals, log_b_range
from .env_model import EnvironmentPath, pgf_eval
from .errors import DomainError, NumericalFailureError
from .logdomain import LogValue, log1m_exp_neg

# When enabled, extinction_step re-derives the telescoped product and
# asserts agreement to 1e-10; costs O(n) per call, so off by default.
debug_checks = False


@dataclass(frozen=True)
class MobiusMap:
    """The map s -> (a s + b) / (c s + d); closed under composition."""

    a: float
    b: float
    c: float
    d: float

    @staticmethod
    def identity() -> "MobiusMap":
        return MobiusMap(1.0, 0.0, 0.0, 1.0)

    @staticmethod
    def from_mean(m: float) -> "MobiusMap":
        """The geometric generating function with mean m as a fractional-linear map."""
        if not m > 0:
            raise DomainError(f"mean offspring must be positive, got {m}")
        return MobiusMap(0.0, 1.0, -m, 1.0 + m)

    def __call__(self, s: float) -> float:
        return (self.a * s + self.b) / (self.c * s + self.d)

    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    def compose(self, inner: "MobiusMap") -> "MobiusMap":
        """self after inner, i.e. s -> self(inner(s)); the usual 2x2 product."""
        return MobiusMap(
            self.a * inner.a + self.b * inner.c,
            self.a * inner.b + self.b * inner.d,
            self.c * inner.a + self.d * inner.c,
            self.c * inner.b + self.d * inner.d,
        )

    def normalized(self) -> "MobiusMap":
        """Divide all coefficients by the largest magnitude; same map."""
        scale = max(abs(self.a), abs(self.b), abs(self.c), abs(self.d))
        if scale == 0.0:
            raise NumericalFailureError("degenerate fractional-linear map")
        return MobiusMap(self.a / scale, self.b / scale, self.c / scale, self.d / scale)


def compose_mobius(path: EnvironmentPath, i: int, n: int) -> MobiusMap:
    """The composed map of generations i+1..n, normalized after every step."""
    _check_window(path.n, i, n)
    acc = MobiusMap.identity()
    for k in range(i + 1, n + 1):
        acc = acc.compose(MobiusMap.from_mean(math.exp(path.x[k - 1]))).normalized()
        if abs(acc.det()) < 1e-300:
            raise NumericalFailureError(f"composed map determinant vanished at generation {k}")
    return acc


def compose_pgf_bruteforce(path: EnvironmentPath, i: int, n: int, s: float) -> float:
    """Right-to-left fold of the per-generation generating functions.

    Evaluates the composition of generations i+1..n at s; i = n returns s.
    This is the oracle the closed forms are tested against.
    """
    _check_window(path.n, i, n)
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"argument must lie in [0, 1], got {s}")
    t = s
    for k in range(n, i, -1):
        t = pgf_eval(math.exp(path.x[k - 1]), t)
    return t


def _check_window(length: int, i: int, n: int) -> None:
    if not 0 <= i <= n <= length:
        raise DomainError(f"need 0 <= i <= n <= path length, got i={i}, n={n}, length={length}")


def _check_clan_indices(w: WalkFunctionals, i: int, n: int) -> None:
    if not 0 <= i < n <= w.n:
        raise DomainError(f"need 0 <= i < n <= walk length, got i={i}, n={n}, length={w.n}")


def _log_tail(w: WalkFunctionals, a: int, n: int) -> float:
    """log sum_{k=a}^{n} e^{-S_k}; direct summation, no cancellation."""
    return float(logsumexp(-w.s[a:n + 1]))


def _resolve_log1ms(s: float | None, one_minus_s: float | None) -> float | None:
    """log(1 - s) from either parameterization; None encodes s = 1 exactly."""
    if (s is None) == (one_minus_s is None):
        raise DomainError("pass exactly one of s or one_minus_s")
    if s is not None:
        if not 0.0 <= s <= 1.0:
            raise DomainError(f"argument must lie in [0, 1], got {s}")
        if s == 1.0:
            return None
        return math.log1p(-s)
    if not 0.0 < one_minus_s <= 1.0:
        raise DomainError(f"one_minus_s must lie in (0, 1], got {one_minus_s}")
    return math.log(one_minus_s)


def survival_closed(w: WalkFunctionals, i: int, n: int, s: float | None = None, *,
                    one_minus_s: float | None = None) -> LogValue:
    """Closed form of 1 - F_{i,n}(s) in log domain.

    Accepts the evaluation point either as s or as 1 - s; the latter keeps
    full precision when the caller constructs s near 1.  s = 1 returns the
    exact zero.
    """
    _check_clan_indices(w, i, n)
    log1ms = _resolve_log1ms(s, one_minus_s)
    if log1ms is None:
        return LogValue.zero()
    log_window = log_b_range(w, i, n).log - float(w.s[i])  # log(b_n - b_i)
    denom = np.logaddexp(-float(w.s[n]) - log1ms, log_window)
    return LogValue.from_log(-float(w.s[i]) - float(denom))


def extinction_step(w: WalkFunctionals, i: int, n: int) -> LogValue:
    """F_{i,n}(0) as the log-domain ratio of adjacent tail sums."""
    _check_clan_indices(w, i, n)
    value = LogValue.from_log(_log_tail(w, i + 1, n) - _log_tail(w, i, n))
    if debug_checks:
        total = math.fsum(extinction_step_log(w, j, n) for j in range(n))
        direct = -float(w.s[n]) - float(w.log_b[n + 1])
        if abs(total - direct) > 1e-10 * max(1.0, abs(direct)):
            raise NumericalFailureError("telescoped extinction product failed self-check")
    return value


def extinction_step_log(w: WalkFunctionals, i: int, n: int) -> float:
    """log F_{i,n}(0) without the debug recursion."""
    return _log_tail(w, i + 1, n) - _log_tail(w, i, n)


def _h_from_log1ms(w: WalkFunctionals, i: int, n: int, log1ms: float) -> LogValue:
    s_i, s_n = float(w.s[i]), float(w.s[n])
    log_window = log_b_range(w, i, n).log - s_i  # log(b_n - b_i)
    f1 = -s_i - float(np.logaddexp(-s_n - log1ms, log_window))
    f2 = _log_tail(w, i, n) - _log_tail(w, i + 1, n)
    f3 = -s_n - float(w.log_b[n + 1])
    return LogValue.from_log(f1 + f2 + f3)


def h_functional(w: WalkFunctionals, i: int, n: int, s: float | None = None, *,
                 one_minus_s: float | None = None) -> LogValue:
    """The only-surviving-clan functional h_{i,n}(s), all factors in log domain.

    h(1) = 0 exactly; h(0) is the conditional probability that exactly the
    clan founded at generation i is alive at n.
    """
    _check_clan_indices(w, i, n)
    log1ms = _resolve_log1ms(s, one_minus_s)
    if log1ms is None:
        return LogValue.zero()
    if log1ms == 0.0:  # s = 0: the (1-s)^{-1} weight drops out
        return cond_event_prob(w, i, n)
    return _h_from_log1ms(w, i, n, log1ms)


def cond_event_prob(w: WalkFunctionals, i: int, n: int) -> LogValue:
    """P(only the clan of generation i survives at n | environment)."""
    _check_clan_indices(w, i, n)
    log_p = (-float(w.s[i]) - _log_tail(w, i + 1, n)) + (-float(w.s[n]) - float(w.log_b[n + 1]))
    return LogValue.from_log(log_p)


def h_functional_window(w: WalkFunctionals, i: int, n: int, s: float | None = None, *,
                        one_minus_s: float | None = None) -> LogValue:
    """The alternative evaluation of the clan functional from window sums.

    Uses the relative functionals a_{i,n} = e^{S_i - S_n} and b_{i,n} (the
    window sum anchored at i) instead of the prefix differences.  Kept as a
    cross-check of the prefix form; the "- 1" in its middle factor sheds the
    window's leading unit term analytically rather than by subtraction.
    """
    _check_clan_indices(w, i, n)
    log1ms = _resolve_log1ms(s, one_minus_s)
    if log1ms is None:
        return LogValue.zero()
    s_i, s_n = float(w.s[i]), float(w.s[n])
    log_a_in = s_i - s_n
    log_b_in = log_b_range(w, i, n).log
    f1 = -float(np.logaddexp(log_a_in - log1ms, log_b_in))
    top = float(np.logaddexp(log_a_in, log_b_in))
    if i + 1 == n:  # window holds only its unit term; a + b - 1 is just a
        bottom = log_a_in
    else:
        bottom = float(np.logaddexp(log_a_in, s_i + float(logsumexp(-w.s[i + 1:n]))))
    f3 = -s_n - float(np.logaddexp(-s_n, float(w.log_b[n])))
    return LogValue.from_log(f1 + (top - bottom) + f3)


def v_functional(w_reflected: WalkFunctionals, j: int, n: int, beta: float) -> LogValue:
    """The dual (time-reversed) clan functional, evaluated on the reflected walk.

    With j = n - i, its expectation over environments equals that of the
    Laplace-point functional h_{i,n}(exp(-beta a_{i,n})).  beta = inf is a
    first-class case and reduces to the product of the first-step ratio and
    the full prefix weight.
    """
    if not 1 <= j <= n <= w_reflected.n:
        raise DomainError(f"need 1 <= j <= n <= walk length, got j={j}, n={n}")
    if not beta > 0:
        raise DomainError(f"beta must be positive (inf allowed), got {beta}")
    s = w_reflected.s
    log_b = w_reflected.log_b
    if math.isinf(beta):
        return LogValue.from_log(-float(s[j]) - float(log_b[j]) - float(log_b[n + 1]))
    # sum_{k=1}^{j} e^{-S_k} on the given walk; nonempty since j >= 1
    log_head = float(logsumexp(-s[1:j + 1]))
    log_t = math.log(beta) + float(s[j])  # beta / a_j with a_j = e^{-S_j}
    inv_weight = -log1m_exp_neg(log_t)    # log (1 - e^{-t})^{-1}
    denom = float(np.logaddexp(inv_weight, log_head))
    return LogValue.from_log(
        -float(s[j]) - denom + (float(log_b[j + 1]) - float(log_b[j])) - float(log_b[n + 1])
    )


def yaglom_integrand(w: WalkFunctionals, i: int, n: int, beta: float) -> LogValue:
    """h_{i,n} evaluated at s = exp(-beta a_{i,n}) without ever forming s.

    The factor 1 - s is taken from -expm1(-beta a_{i,n}) in log domain, so
    precision survives beta * a_{i,n} down to the underflow threshold.
    beta = 0 gives the exact zero (s = 1); beta = inf gives the event
    probability (s = 0).
    """
    _check_clan_indices(w, i, n)
    if beta < 0:
        raise DomainError(f"beta must be nonnegative, got {beta}")
    if beta == 0:
        return LogValue.zero()
    if math.isinf(beta):
        return cond_event_prob(w, i, n)
    log_t = math.log(beta) + float(w.s[i]) - float(w.s[n])
    return _h_from_log1ms(w, i, n, log1m_exp_neg(log_t))


# ---------------------------------------------------------------------------
# Reversed-composition product identity (small-i oracle).
#
# Folding the generating functions of the sign-flipped environment in
# reversed order telescopes against the prefix sums of the original walk:
#   prod_{k=1}^{i-1} Fbar_k(Fbar_{k-1}(...Fbar_1(z))) = w / (w + sum_{k=1}^{i-1} e^{-S_k})
# with w = (1 - z)^{-1} and Fbar_k the geometric law with mean e^{-X_k}.
# ---------------------------------------------------------------------------


def reversed_product_bruteforce(path: EnvironmentPath, i: int, z: float) -> float:
    """prod_{k=1}^{i-1} of reversed compositions under the sign-flipped environment."""
    if not 2 <= i <= path.n + 1:
        raise DomainError(f"need 2 <= i <= path length + 1, got i={i}")
    if not 0.0 <= z < 1.0:
        raise DomainError(f"z must lie in [0, 1), got {z}")
    out = 1.0
    for k in range(1, i):
        t = z
        for j in range(1, k + 1):
            t = pgf_eval(math.exp(-path.x[j - 1]), t)
        out *= t
    return out


def reversed_product_closed(path: EnvironmentPath, i: int, z: float) -> float:
    """Closed form of the same product from the original walk's prefix sums."""
    if not 2 <= i <= path.n + 1:
        raise DomainError(f"need 2 <= i <= path length + 1, got i={i}")
    if not 0.0 <= z < 1.0:
        raise DomainError(f"z must lie in [0, 1), got {z}")
    s = np.cumsum(path.x)
    w_weight = 1.0 / (1.0 - z)
    return w_weight / (w_weight + float(np.exp(-s[:i - 1]).sum()))
