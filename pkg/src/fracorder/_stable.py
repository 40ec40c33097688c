"""Converged Mittag-Leffler evaluation on the non-positive real axis.

Internal module. The public series operations return partial sums by
design; the resolvent and estimator layers need fully converged values of
E_{a,b}(z) and its second-order variant for z <= 0, including small a
(where the alternating series is hopelessly ill conditioned in double
precision) and b <= 0 (derivative kernels). A short series handles |z|
small; everywhere else the value is recovered from the inverse Laplace
representation on a parabolic contour s = mu (1 + i w)^2 with a fixed
trapezoid rule.

Contour parameters are frozen against an extended-precision reference
lattice in the test suite. The apex mu floats up with |z|^(1/a) for a > 1
so the principal-sheet poles of (s^a - z)^(-g) stay safely left of the
contour.
"""

from __future__ import annotations

import numpy as np
from scipy.special import rgamma

from fracorder.errors import DomainError

_SERIES_CUT = 0.7
_SERIES_KMAX = 400
_NODES = 129
_MU_FLOOR = 10.0
_MU_POLE_FACTOR = 1.9
_TAIL_BUDGET = 42.0
_Z_MIN = -150.0


def _series(alpha: float, beta: float, zs: np.ndarray,
            second: bool) -> np.ndarray:
    # plain summation; only used where |z| <= _SERIES_CUT keeps it benign
    out = np.full(zs.shape, rgamma(beta))
    power = np.ones_like(zs)
    prev = np.inf
    for k in range(1, _SERIES_KMAX + 1):
        power = power * zs
        weight = (k + 1.0) if second else 1.0
        term = weight * power * rgamma(alpha * k + beta)
        out += term
        # a lone zero term can come from a gamma pole, so require two
        # consecutive negligible terms before stopping
        cur = float(np.max(np.abs(term)))
        if max(cur, prev) <= 1e-17 * float(np.min(
                np.maximum(np.abs(out), 1e-30))):
            break
        prev = cur
    return out


def _contour(alpha: float, beta: float, zs: np.ndarray, gamma: float,
             mu: float) -> np.ndarray:
    wmax = np.sqrt(1.0 + _TAIL_BUDGET / mu)
    w = np.linspace(-wmax, wmax, _NODES)
    step = w[1] - w[0]
    iw = 1.0 + 1j * w
    s = mu * iw * iw
    pref = np.exp(s) * s ** (alpha * gamma - beta) * iw
    den = (s ** alpha - zs[:, None]) ** gamma
    return (mu * step / np.pi) * np.sum((pref[None, :] / den).real, axis=1)


def ml_vec(alpha: float, beta: float, zs: np.ndarray,
           gamma: float = 1.0) -> np.ndarray:
    """Converged E^gamma_{alpha,beta} at an array of points z <= 0.

    beta may be any real (non-positive included); gamma is 1 or 2.
    """
    if not 0.0 < alpha <= 2.0:
        raise DomainError(f"alpha must lie in (0, 2], got {alpha:g}")
    if gamma not in (1.0, 2.0, 1, 2):
        raise DomainError(f"gamma must be 1 or 2, got {gamma:g}")
    zs = np.atleast_1d(np.asarray(zs, dtype=float))
    if zs.size == 0:
        return np.zeros(0)
    if np.any(zs > 0.0) or np.any(zs < _Z_MIN):
        raise DomainError(
            f"z must lie in [{_Z_MIN:g}, 0], got range "
            f"[{zs.min():g}, {zs.max():g}]")
    out = np.empty(zs.shape)
    if gamma == 1 and alpha == 1.0 and beta in (1.0, 2.0):
        # exact boundary cases keep the classical solver paths clean
        if beta == 1.0:
            return np.exp(zs)
        small = zs == 0.0
        out[small] = 1.0
        out[~small] = np.expm1(zs[~small]) / zs[~small]
        return out
    if gamma == 1 and alpha == 2.0 and beta in (1.0, 2.0):
        r = np.sqrt(-zs)
        if beta == 1.0:
            return np.cos(r)
        small = zs == 0.0
        out[small] = 1.0
        out[~small] = np.sin(r[~small]) / r[~small]
        return out
    near = np.abs(zs) <= _SERIES_CUT
    if np.any(near):
        out[near] = _series(alpha, beta, zs[near], second=(gamma == 2))
    if np.any(~near):
        far = zs[~near]
        mu = _MU_FLOOR
        if alpha > 1.0:
            pole_apex = (np.max(np.abs(far)) ** (1.0 / alpha)
                         * np.cos(np.pi / (2.0 * alpha)) ** 2)
            mu = max(mu, _MU_POLE_FACTOR * pole_apex)
        out[~near] = _contour(alpha, beta, far, float(gamma), mu)
    return out


def ml_one(alpha: float, beta: float, z: float, gamma: float = 1.0) -> float:
    """Scalar convenience wrapper around ml_vec."""
    return float(ml_vec(alpha, beta, np.array([z]), gamma)[0])


def ml_vec_multi(alpha: float, betas, zs: np.ndarray) -> np.ndarray:
    """E_{alpha,beta}(z) for several beta over one z array, gamma = 1.

    The contour denominator depends on (alpha, z) only, so evaluating a
    family of betas together reuses it; the result row k matches
    betas[k]. Values agree with ml_vec per row.
    """
    if not 0.0 < alpha <= 2.0:
        raise DomainError(f"alpha must lie in (0, 2], got {alpha:g}")
    zs = np.atleast_1d(np.asarray(zs, dtype=float))
    betas = [float(b) for b in betas]
    out = np.empty((len(betas), zs.size))
    if zs.size == 0:
        return out
    if np.any(zs > 0.0) or np.any(zs < _Z_MIN):
        raise DomainError(
            f"z must lie in [{_Z_MIN:g}, 0], got range "
            f"[{zs.min():g}, {zs.max():g}]")
    near = np.abs(zs) <= _SERIES_CUT
    far = zs[~near]
    inv_den = None
    if far.size:
        mu = _MU_FLOOR
        if alpha > 1.0:
            pole_apex = (np.max(np.abs(far)) ** (1.0 / alpha)
                         * np.cos(np.pi / (2.0 * alpha)) ** 2)
            mu = max(mu, _MU_POLE_FACTOR * pole_apex)
        wmax = np.sqrt(1.0 + _TAIL_BUDGET / mu)
        w = np.linspace(-wmax, wmax, _NODES)
        step = w[1] - w[0]
        iw = 1.0 + 1j * w
        s = mu * iw * iw
        base = np.exp(s) * s ** alpha * iw
        inv_den = 1.0 / (s ** alpha - far[:, None])
        scale = mu * step / np.pi
    for k, beta in enumerate(betas):
        if np.any(near):
            out[k, near] = _series(alpha, beta, zs[near], second=False)
        if far.size:
            pref = base * s ** (-beta)
            out[k, ~near] = scale * np.sum(
                (pref[None, :] * inv_den).real, axis=1)
    return out
