"""Truncated power series for Mittag-Leffler type functions.

The two-parameter function is E_{a,b}(z) = sum_k z^k / Gamma(a k + b); the
second-order variant carries an extra (k + 1) factor. These routines
expose *partial sum* semantics on purpose: a policy picks either a fixed
truncation index or an adaptive stopping rule, and a warning fires when
the returned sum cannot have met its tolerance. Converged evaluation on
the negative axis is a different problem and lives elsewhere.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

from fracorder.errors import DomainError, PoleError, TruncationWarning

__all__ = [
    "MLOrder",
    "MLResult",
    "SummationMode",
    "TruncationPolicy",
    "g_kernel",
    "gamma_fn",
    "mittag_leffler",
    "mittag_leffler_sum",
    "prabhakar_ml2",
    "prabhakar_ml2_sum",
]


def gamma_fn(x: float) -> float:
    """Gamma function for real arguments.

    Raises PoleError at non-positive integers and lets the underlying
    OverflowError propagate for very large arguments.
    """
    if x <= 0.0 and x == math.floor(x):
        raise PoleError(f"gamma pole at x = {x:g}")
    return math.gamma(x)


def g_kernel(gamma: float, t: float) -> float:
    """Power kernel t^(gamma - 1) / Gamma(gamma)."""
    if gamma <= 0.0:
        raise DomainError(f"kernel exponent must be positive, got {gamma:g}")
    if t <= 0.0:
        raise DomainError(f"kernel argument must be positive, got {t:g}")
    return t ** (gamma - 1.0) / gamma_fn(gamma)


class SummationMode(enum.Enum):
    FIXED = "fixed"
    ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class TruncationPolicy:
    """Stopping rule for a series evaluation.

    ``max_terms`` bounds the largest summation index k (inclusive), so a
    fixed policy with max_terms = N sums exactly N + 1 terms. The adaptive
    mode stops once |term_k| <= rel_tol * |partial sum|.
    """

    mode: SummationMode = SummationMode.ADAPTIVE
    max_terms: int = 2000
    rel_tol: float = 1e-15

    def __post_init__(self) -> None:
        if self.max_terms < 1:
            raise DomainError("max_terms must be a positive integer")
        if not 0.0 <= self.rel_tol < 1.0:
            raise DomainError("rel_tol must lie in [0, 1)")

    @classmethod
    def fixed(cls, n: int) -> "TruncationPolicy":
        return cls(mode=SummationMode.FIXED, max_terms=n)

    @classmethod
    def adaptive(cls, rel_tol: float = 1e-15,
                 max_terms: int = 2000) -> "TruncationPolicy":
        return cls(SummationMode.ADAPTIVE, max_terms, rel_tol)


_DEFAULT_POLICY = TruncationPolicy()


@dataclass(frozen=True)
class MLOrder:
    """Parameter pair (alpha, beta) of a Mittag-Leffler function."""

    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if not self.alpha > 0.0:
            raise DomainError(f"alpha must be positive, got {self.alpha:g}")
        if not self.beta > 0.0:
            raise DomainError(f"beta must be positive, got {self.beta:g}")


@dataclass(frozen=True)
class MLResult:
    """Partial sum with truncation diagnostics."""

    value: float
    terms_used: int
    last_term: float
    within_tolerance: bool


def _partial_sum(order: MLOrder, z: float, policy: TruncationPolicy,
                 second: bool) -> MLResult:
    a, b = order.alpha, order.beta
    if z == 0.0:
        v = math.exp(-math.lgamma(b))
        return MLResult(v, 1, v, True)
    total = 0.0
    comp = 0.0
    # Terms advance by the recurrence term_{k+1} = term_k * z / Gamma-ratio
    # with the ratio taken through log-Gamma differences. Direct per-term
    # exponentials carry rounding that is rough in k and survives the
    # alternating cancellation; the recurrence drifts smoothly and its
    # error cancels along with the terms themselves.
    term = math.exp(-math.lgamma(b))
    lg = math.lgamma(b)
    mag = abs(term)
    terms = 0
    for k in range(policy.max_terms + 1):
        # Kahan update
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
        mag = abs(term)
        terms = k + 1
        # Stopping is a tail statement only. Cancellation can cap the
        # achievable accuracy at peak * eps regardless of how small the
        # tail gets, so waiting for more terms would never help; callers
        # needing large-argument evaluations use the stable backend.
        if (policy.mode is SummationMode.ADAPTIVE and k > 0
                and mag <= policy.rel_tol * abs(total)):
            return MLResult(total, terms, mag, True)
        if k == policy.max_terms:
            break
        lg_next = math.lgamma(a * (k + 1) + b)
        term = term * z / math.exp(lg_next - lg)
        if second:
            term = term * ((k + 2) / (k + 1))
        lg = lg_next
        if math.isinf(term) or math.isnan(term):
            raise OverflowError(
                f"series term at k = {k + 1} overflows double precision")
    ok = mag <= policy.rel_tol * abs(total)
    result = MLResult(total, terms, mag, ok)
    if not ok:
        warnings.warn(
            TruncationWarning(
                f"series truncated after {terms} terms with last term "
                f"{mag:.3e} against partial sum {total:.3e}"),
            stacklevel=3)
    return result


def mittag_leffler_sum(order: MLOrder, z: float,
                       policy: TruncationPolicy | None = None) -> MLResult:
    """Partial sum of E_{alpha,beta}(z) with diagnostics."""
    return _partial_sum(order, z, policy or _DEFAULT_POLICY, second=False)


def mittag_leffler(order: MLOrder, z: float,
                   policy: TruncationPolicy | None = None) -> float:
    """Partial sum of E_{alpha,beta}(z) under the given policy."""
    return mittag_leffler_sum(order, z, policy).value


def prabhakar_ml2_sum(order: MLOrder, z: float,
                      policy: TruncationPolicy | None = None) -> MLResult:
    """Partial sum of the second-order variant, terms (k+1) z^k / Gamma(ak+b)."""
    return _partial_sum(order, z, policy or _DEFAULT_POLICY, second=True)


def prabhakar_ml2(order: MLOrder, z: float,
                  policy: TruncationPolicy | None = None) -> float:
    return prabhakar_ml2_sum(order, z, policy).value
