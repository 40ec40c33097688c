"""Scalar resolvent families S(t) = t^(beta-1) E_{alpha,beta}(-lambda t^alpha).

These kernels solve the scalar fractional relaxation problems that the
spectral solver decouples into. Sampling attaches the truncated power
series around t = 0 as a leading-term model, valid while
lambda * t^alpha stays below a fixed threshold; the quadrature layer
uses it to integrate the singular cells exactly.

The identity checks at the bottom verify convolution relations the
resolvents satisfy, evaluated over the interior of a uniform grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from fracorder import _stable
from fracorder.errors import DomainError, MissingDatumError
from fracorder.special import MLOrder, TruncationPolicy, mittag_leffler
from fracorder.quadrature import (
    LeadingTerms,
    SampledFunction,
    TimeGrid,
    _convolve_any,
    convolve,
    convolve_kernel_g,
    cumulative_integral,
    sample_kernel_g,
    scale_by_t,
)

# model validity threshold: the series model is trusted while
# lambda * t^alpha <= W_EXT
W_EXT = 1.2
# deepest exponent carried by a sampling model
RHO_DEEP = 14.0
_MAX_MODEL_TERMS = 80
_COEF_CAP = 1e250


@dataclass(frozen=True)
class ResolventSpec:
    """Order pair of a resolvent family: alpha in (0, 2], beta > 0."""

    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 2.0:
            raise DomainError(
                f"alpha must lie in (0, 2], got {self.alpha:g}")
        if not self.beta > 0.0:
            raise DomainError(f"beta must be positive, got {self.beta:g}")


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not (math.isfinite(lam) and lam >= 0.0):
        raise DomainError(f"lambda must be finite and >= 0, got {lam!r}")
    return lam


def scalar_resolvent(spec: ResolventSpec, lam: float, t: float,
                     policy: Optional[TruncationPolicy] = None) -> float:
    """S(t) at a single positive time.

    Without a policy the evaluation goes through the stable evaluator;
    a policy routes it through the plain partial sum it describes.
    """
    lam = _check_lambda(lam)
    if not t > 0.0:
        raise DomainError(f"time must be positive, got {t:g}")
    z = -lam * t ** spec.alpha
    if policy is None:
        e = _stable.ml_one(spec.alpha, spec.beta, z)
    else:
        e = mittag_leffler(MLOrder(spec.alpha, spec.beta), z, policy)
    return t ** (spec.beta - 1.0) * e


def resolvent_lead(spec: ResolventSpec, lam: float) -> LeadingTerms:
    """Series model sum_k (-lambda)^k g_{alpha k + beta} near t = 0."""
    lam = _check_lambda(lam)
    terms = []
    coef = 1.0
    k = 0
    while k < _MAX_MODEL_TERMS and abs(coef) <= _COEF_CAP:
        rho = spec.alpha * k + spec.beta
        if rho > RHO_DEEP:
            break
        terms.append((coef, rho))
        coef *= -lam
        k += 1
    radius = math.inf if lam == 0.0 else (W_EXT / lam) ** (1.0 / spec.alpha)
    return LeadingTerms(tuple(terms), radius)


def sample_resolvent(spec: ResolventSpec, lam: float, grid: TimeGrid,
                     policy: Optional[TruncationPolicy] = None
                     ) -> SampledFunction:
    """Sample S over a grid, with the series model attached."""
    lam = _check_lambda(lam)
    lead = resolvent_lead(spec, lam)
    ts = grid.nodes
    vals = np.empty(ts.shape)
    if policy is None:
        zs = -lam * ts[1:] ** spec.alpha
        vals[1:] = (ts[1:] ** (spec.beta - 1.0)
                    * _stable.ml_vec(spec.alpha, spec.beta, zs))
    else:
        order = MLOrder(spec.alpha, spec.beta)
        for i, t in enumerate(ts[1:], start=1):
            z = -lam * t ** spec.alpha
            vals[i] = t ** (spec.beta - 1.0) * mittag_leffler(
                order, z, policy)
    vals[0] = lead.limit0()
    return SampledFunction(grid, vals, lead)


class DatumKind(Enum):
    """Which initial datum a resolvent factor multiplies."""

    U0 = "u0"
    U1 = "u1"


@dataclass(frozen=True)
class SpectralMode:
    """One diagonal mode: eigenvalue and its initial data."""

    lam: float
    u0: float
    u1: Optional[float] = None

    def __post_init__(self) -> None:
        _check_lambda(self.lam)
        if not math.isfinite(self.u0):
            raise DomainError("u0 must be finite")
        if self.u1 is not None and not math.isfinite(self.u1):
            raise DomainError("u1 must be finite when given")


@dataclass(frozen=True)
class SpectralOperator:
    """Diagonalized operator: a finite family of modes."""

    modes: Tuple[SpectralMode, ...]

    def __post_init__(self) -> None:
        if not self.modes:
            raise DomainError("an operator needs at least one mode")


def dirichlet_laplacian_modes(length: float, count: int) -> Tuple[float, ...]:
    """Eigenvalues (n pi / length)^2 of the 1-d Dirichlet Laplacian."""
    if not length > 0.0:
        raise DomainError("interval length must be positive")
    if count < 1:
        raise DomainError("need at least one eigenvalue")
    return tuple((n * math.pi / length) ** 2 for n in range(1, count + 1))


def spectral_resolvent_apply(
        op: SpectralOperator, spec: ResolventSpec, t: float,
        which: DatumKind,
        policy: Optional[TruncationPolicy] = None) -> List[float]:
    """Apply S(t) modewise to the chosen initial datum."""
    out = []
    for mode in op.modes:
        if which is DatumKind.U0:
            datum = mode.u0
        else:
            if mode.u1 is None:
                raise MissingDatumError(
                    "mode carries no second datum but one was requested")
            datum = mode.u1
        out.append(scalar_resolvent(spec, mode.lam, t, policy) * datum)
    return out


class IdentityKind(Enum):
    """Convolution identities satisfied by the resolvent families."""

    PROP1_3 = "resolvent-equation"
    LEMMA2_1 = "time-weight-beta-one"
    LEMMA2_2 = "time-weight-derivative"
    LEMMA3_1 = "time-weight-beta-alpha"
    LEMMA3_3 = "product-rule-beta-alpha"


def _window(grid: TimeGrid) -> np.ndarray:
    return grid.nodes >= grid.t_max / 10.0 - 1e-12


def _pointwise_family(alpha: float, beta: float, lam: float,
                      ts: np.ndarray) -> np.ndarray:
    zs = -lam * ts ** alpha
    return ts ** (beta - 1.0) * _stable.ml_vec(alpha, beta, zs)


def identity_residual(kind: IdentityKind, spec: ResolventSpec, lam: float,
                      t_max: float, grid_size: int) -> float:
    """Max |LHS - RHS| of the chosen identity over nodes t >= t_max/10."""
    lam = _check_lambda(lam)
    grid = TimeGrid.uniform(t_max, grid_size)
    mask = _window(grid)
    ts = grid.nodes
    a = spec.alpha
    if kind is IdentityKind.PROP1_3:
        s = sample_resolvent(spec, lam, grid)
        if a == 2.0:
            inner = cumulative_integral(cumulative_integral(s))
        else:
            inner = convolve_kernel_g(a, s)
        gb = sample_kernel_g(spec.beta, grid)
        lhs = s.values
        rhs = gb.values - lam * inner.values
        return float(np.max(np.abs(lhs[mask] - rhs[mask])))
    if kind in (IdentityKind.LEMMA2_1, IdentityKind.LEMMA2_2):
        if spec.beta != 1.0:
            raise DomainError("identity needs beta = 1")
        s1 = sample_resolvent(spec, lam, grid)
        if kind is IdentityKind.LEMMA2_1:
            # t S = -(alpha - 1) (g_1 * S) + alpha (S * S)
            lhs = scale_by_t(s1).values
            rhs = (-(a - 1.0) * cumulative_integral(s1).values
                   + a * convolve(s1, s1).values)
            return float(np.max(np.abs(lhs[mask] - rhs[mask])))
        # t S' = alpha (S' * S) with S' = -lambda S_{alpha,alpha}
        saa = sample_resolvent(ResolventSpec(a, a), lam, grid)
        lhs = -lam * scale_by_t(saa).values
        rhs = -lam * a * _convolve_any(saa, s1).values
        return float(np.max(np.abs(lhs[mask] - rhs[mask])))
    if spec.beta != a:
        raise DomainError("identity needs beta = alpha")
    saa = sample_resolvent(ResolventSpec(a, a), lam, grid)
    square = _convolve_any(saa, saa)
    if kind is IdentityKind.LEMMA3_1:
        if not a < 1.0:
            raise DomainError("identity holds for alpha below 1")
        # t S = alpha (g_{1-alpha} * S * S)
        lhs = scale_by_t(saa).values
        rhs = a * convolve_kernel_g(1.0 - a, square).values
        return float(np.max(np.abs(lhs[mask] - rhs[mask])))
    if kind is IdentityKind.LEMMA3_3:
        # S + t S' = alpha (S - lambda (S * S)) with S' = S_{alpha,alpha-1}
        lhs = (saa.values[mask]
               + ts[mask] * _pointwise_family(a, a - 1.0, lam, ts[mask]))
        rhs = a * (saa.values[mask] - lam * square.values[mask])
        return float(np.max(np.abs(lhs - rhs)))
    raise DomainError(f"unknown identity kind {kind!r}")
