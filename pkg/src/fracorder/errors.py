"""Exception and warning types shared across the package."""

from __future__ import annotations


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class PoleError(DomainError):
    """The gamma function was evaluated at a non-positive integer."""


class GridMismatchError(ValueError):
    """Two sampled functions do not share the same time grid."""


class GridTooCoarseError(ValueError):
    """The grid has too few nodes for the requested discretization."""


class LengthMismatchError(ValueError):
    """Array lengths are inconsistent with the grid."""


class MissingDatumError(ValueError):
    """A required initial datum or parameter was not supplied."""


class UnsupportedError(ValueError):
    """The requested combination of options is not provided."""


class DegenerateDenominatorError(ArithmeticError):
    """A ratio's denominator is below the degeneracy threshold.

    The threshold scales with the data: eps * max|data| with eps = 1e-12.
    """


class BracketError(ValueError):
    """A root bracket is invalid or an inversion left its domain."""


class NoSignChangeError(RuntimeError):
    """The residual never changes sign on the scanned bracket.

    Carries the scanned candidates and residual values for diagnosis.
    """

    def __init__(self, message: str, candidates=None, residuals=None) -> None:
        super().__init__(message)
        self.candidates = candidates
        self.residuals = residuals


class TruncationWarning(UserWarning):
    """A truncated series was returned before reaching its tolerance."""


class MultipleRootWarning(UserWarning):
    """More than one sign change was found; the smallest root is used."""
