"""Product-integration quadrature for weakly singular convolutions.

Everything here operates on functions sampled over a uniform grid on
[0, T]. Convolutions integrate piecewise linear interpolants exactly,
which keeps the scheme second order for smooth data. Samples with an
integrable power singularity at t = 0 carry a leading-term model: inside
the model's validity radius the quadrature swaps the interpolant of the
modelled part for exact moments of t^(rho-1), so the singular cells never
see a polynomial fit of something that is not polynomial-like. Outside
the radius the raw interpolant is used; corrections never evaluate the
model there.

Fractional derivatives follow the same pattern: the raw difference or L1
pipeline runs everywhere, and inside the model layer its action on the
model is replaced by the analytic derivative, using the same discrete
stencils on model values so the swap cancels exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import betainc

from fracorder.errors import (
    DomainError,
    GridMismatchError,
    GridTooCoarseError,
)

# exponent cap for leads attached to convolution outputs; terms above it
# are smooth enough for plain interpolation downstream
RHO_PRODUCT_CAP = 14.0
# contribution threshold below which a model term is skipped in the
# incomplete-beta pass (relative to the running output scale)
_TERM_PRUNE = 1e-17


class Regime(Enum):
    """Range of the fractional order: SUB is (0, 1], SUPER is (1, 2]."""

    SUB = "sub"
    SUPER = "super"


def _is_pole(rho: float) -> bool:
    return rho <= 0.0 and float(rho) == int(rho)


@dataclass(frozen=True, eq=False)
class LeadingTerms:
    """Small-time model sum(c * t^(rho-1) / Gamma(rho)) with a validity radius.

    Terms whose exponent is a non-positive integer are dropped at
    construction; 1/Gamma vanishes there so they contribute nothing. The
    radius marks how far from t = 0 the model tracks the function closely
    (inf for exact models); quadrature corrections stay inside it.
    """

    terms: Tuple[Tuple[float, float], ...]
    radius: float = math.inf

    def __post_init__(self) -> None:
        if not self.radius > 0.0:
            raise DomainError("model radius must be positive")
        merged: dict = {}
        for coef, rho in self.terms:
            c = float(coef)
            r = float(rho)
            if not math.isfinite(c) or not math.isfinite(r):
                raise DomainError("leading term with non-finite entry")
            if _is_pole(r) or c == 0.0:
                continue
            merged[r] = merged.get(r, 0.0) + c
        ordered = tuple(
            (merged[r], r) for r in sorted(merged) if merged[r] != 0.0)
        object.__setattr__(self, "terms", ordered)

    @property
    def min_rho(self) -> float:
        return self.terms[0][1] if self.terms else math.inf

    def evaluate(self, ts: np.ndarray) -> np.ndarray:
        """Model values at strictly positive times."""
        ts = np.asarray(ts, dtype=float)
        out = np.zeros(ts.shape)
        for coef, rho in self.terms:
            out += (coef / math.gamma(rho)) * ts ** (rho - 1.0)
        return out

    def limit0(self) -> float:
        """Limit at t -> 0+: nan when divergent, else the constant part."""
        if not self.terms:
            return 0.0
        if self.min_rho < 1.0:
            return math.nan
        return sum(c for c, r in self.terms if r == 1.0)

    def scaled(self, factor: float) -> "LeadingTerms":
        return LeadingTerms(
            tuple((factor * c, r) for c, r in self.terms), self.radius)

    def shifted(self, delta: float) -> "LeadingTerms":
        return LeadingTerms(
            tuple((c, r + delta) for c, r in self.terms), self.radius)

    def truncated(self, cap: float) -> "LeadingTerms":
        return LeadingTerms(
            tuple((c, r) for c, r in self.terms if r <= cap), self.radius)

    def without(self, *rhos: float) -> "LeadingTerms":
        keep = tuple(
            (c, r) for c, r in self.terms
            if all(abs(r - x) > 1e-12 for x in rhos))
        return LeadingTerms(keep, self.radius)


def merge_leads(a: Optional[LeadingTerms],
                b: Optional[LeadingTerms]) -> Optional[LeadingTerms]:
    if a is None or not a.terms:
        return b
    if b is None or not b.terms:
        return a
    return LeadingTerms(a.terms + b.terms, min(a.radius, b.radius))


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time nodes starting at 0."""

    nodes: np.ndarray

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise DomainError("a grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise DomainError("grids start at t = 0")
        if not np.all(np.isfinite(nodes)):
            raise DomainError("grid nodes must be finite")
        if not np.all(np.diff(nodes) > 0.0):
            raise DomainError("grid nodes must increase strictly")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, t_max: float, cells: int) -> "TimeGrid":
        if not t_max > 0.0:
            raise DomainError("t_max must be positive")
        if cells < 1:
            raise DomainError("need at least one cell")
        return cls(np.linspace(0.0, float(t_max), cells + 1))

    @property
    def n_cells(self) -> int:
        return self.nodes.size - 1

    @property
    def t_max(self) -> float:
        return float(self.nodes[-1])

    @property
    def is_uniform(self) -> bool:
        d = np.diff(self.nodes)
        return bool(np.allclose(d, d[0], rtol=1e-12, atol=0.0))

    def spacing(self) -> float:
        if not self.is_uniform:
            raise GridMismatchError("operation requires a uniform grid")
        return float(self.nodes[1])

    def same_as(self, other: "TimeGrid") -> bool:
        return (self.nodes.size == other.nodes.size
                and bool(np.array_equal(self.nodes, other.nodes)))


@dataclass(frozen=True, eq=False)
class SampledFunction:
    """Node values over a grid, optionally with a small-time model.

    values[0] is nan exactly when the function diverges at 0; a model
    with min_rho < 1 forces the tag and a model with min_rho >= 1
    forbids it. All other entries must be finite.
    """

    grid: TimeGrid
    values: np.ndarray
    lead: Optional[LeadingTerms] = None

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.nodes.shape:
            raise DomainError("values and grid sizes differ")
        if not np.all(np.isfinite(vals[1:])):
            raise DomainError("sample values must be finite for t > 0")
        head = vals[0]
        if not (np.isfinite(head) or np.isnan(head)):
            raise DomainError("value at t = 0 must be finite or nan")
        if self.lead is not None and self.lead.terms:
            if self.lead.min_rho < 1.0 and not np.isnan(head):
                raise DomainError(
                    "model diverges at 0 but values[0] is finite")
            if self.lead.min_rho >= 1.0 and np.isnan(head):
                raise DomainError(
                    "values[0] is nan but the model is finite at 0")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def is_singular(self) -> bool:
        return bool(np.isnan(self.values[0]))


def sample_kernel_g(gamma: float, grid: TimeGrid) -> SampledFunction:
    """Sample g_gamma(t) = t^(gamma-1)/Gamma(gamma) with its exact model."""
    if not gamma > 0.0:
        raise DomainError("kernel exponent must be positive")
    ts = grid.nodes
    vals = np.empty(ts.shape)
    vals[1:] = ts[1:] ** (gamma - 1.0) / math.gamma(gamma)
    if gamma < 1.0:
        vals[0] = math.nan
    elif gamma == 1.0:
        vals[0] = 1.0
    else:
        vals[0] = 0.0
    return SampledFunction(grid, vals, LeadingTerms(((1.0, gamma),)))


# --- low-level index algebra ---------------------------------------------

def _star_values(f: SampledFunction) -> np.ndarray:
    vals = np.array(f.values, dtype=float)
    if np.isnan(vals[0]):
        vals[0] = 0.0
    return vals


def _conv(a: np.ndarray, b: np.ndarray, npts: int) -> np.ndarray:
    # trailing zeros of b (masked layers) never reach indices < npts
    nz = np.flatnonzero(b)
    if a.size == 0 or nz.size == 0:
        return np.zeros(npts)
    b = b[: nz[-1] + 1]
    if min(a.size, b.size) <= 256:
        out = np.convolve(a, b)[:npts]
    else:
        out = fftconvolve(a, b)[:npts]
    if out.size < npts:
        out = np.concatenate([out, np.zeros(npts - out.size)])
    return out


def _pair_conv(fv: np.ndarray, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """sum over cells j < m of fv[m-j] * A[j] + fv[m-1-j] * B[j].

    A and B hold one weight per cell (length n for n+1 nodes).
    """
    npts = fv.shape[0]
    out = np.empty(npts)
    out[0] = 0.0
    c1 = _conv(fv, A, npts)
    c2 = _conv(fv, B, npts)
    out[1:] = c1[1:] + c2[:-1]
    # drop the j = m diagonal the full convolution picked up
    if fv[0] != 0.0 and npts > 2:
        out[1:-1] -= fv[0] * A[1: npts - 1]
    return out


def _rel_apply(gv: np.ndarray, mu1: np.ndarray,
               nu: np.ndarray) -> np.ndarray:
    """sum over d in [1, m] of gv[m-d] * mu1[d] + gv[m-d+1] * nu[d].

    mu1 and nu are indexed by cell distance d; entry 0 must be zero.
    """
    npts = gv.shape[0]
    c1 = _conv(gv, mu1, npts)
    nus = np.empty_like(nu)
    nus[:-1] = nu[1:]
    nus[-1] = 0.0
    c2 = _conv(gv, nus, npts)
    out = c1 + c2
    if gv[0] != 0.0:
        out -= gv[0] * nus[:npts]
    out[0] = 0.0
    return out


def _abs_apply(pfv: np.ndarray, mu1: np.ndarray, nu: np.ndarray,
               layer: int) -> np.ndarray:
    """Same pairing as _rel_apply with cells restricted to j < layer."""
    npts = pfv.shape[0]
    a = pfv[:layer]
    b = pfv[1: layer + 1]
    return _conv(a, mu1, npts) + _conv(b, nu, npts)


def _pow_inc(rho: float, count: int) -> np.ndarray:
    """(k+1)^rho - k^rho for k = 0..count-1, stable for large k."""
    if count <= 0:
        return np.zeros(0)
    out = np.empty(count)
    out[0] = 1.0
    if count > 1:
        k = np.arange(1, count, dtype=float)
        out[1:] = ((k + 1.0) ** rho
                   * (-np.expm1(rho * np.log1p(-1.0 / (k + 1.0)))))
    return out


def _moment_arrays(rho: float, h: float,
                   cells: int) -> Tuple[np.ndarray, np.ndarray]:
    """Exact cell moments of g_rho against a linear hat.

    W0[j] integrates g_rho over cell j, W1[j] integrates it against the
    local coordinate (s - t_j)/h.
    """
    w0 = (h ** rho) * _pow_inc(rho, cells) / math.gamma(rho + 1.0)
    v = ((h ** (rho + 1.0)) * _pow_inc(rho + 1.0, cells)
         / ((rho + 1.0) * math.gamma(rho)))
    tj = h * np.arange(cells, dtype=float)
    w1 = (v - tj * w0) / h
    return w0, w1


def _pl_cells(gv: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
    P = h * (gv[:-1] / 3.0 + gv[1:] / 6.0)
    Q = h * (gv[:-1] / 6.0 + gv[1:] / 3.0)
    return P, Q


def _layer_cells(lead: LeadingTerms, h: float, cells: int) -> int:
    if not lead.terms:
        return 0
    if math.isinf(lead.radius):
        return cells
    # only cells fully inside the radius; a radius below one spacing
    # means no cell may see the model at all
    return int(min(cells, math.floor(lead.radius / h)))


def _model_node_values(lead: LeadingTerms, ts: np.ndarray,
                       upto: int) -> np.ndarray:
    """Model at nodes 0..upto, star convention at node 0, zero beyond."""
    out = np.zeros(ts.shape)
    if upto >= 1:
        out[1: upto + 1] = lead.evaluate(ts[1: upto + 1])
    head = lead.limit0()
    if math.isfinite(head):
        out[0] = head
    return out


def _combined_cell_moments(lead: LeadingTerms, h: float, cells: int,
                           layer: int) -> Tuple[np.ndarray, np.ndarray]:
    """Coefficient-weighted sum of cell moments over the layer cells."""
    A = np.zeros(cells)
    B = np.zeros(cells)
    for coef, rho in lead.terms:
        w0, w1 = _moment_arrays(rho, h, layer)
        A[:layer] += coef * (w0 - w1)
        B[:layer] += coef * w1
    return A, B


def _has_model(f: SampledFunction) -> bool:
    return f.lead is not None and bool(f.lead.terms)


def _check_integrable(f: SampledFunction, label: str) -> None:
    if f.is_singular:
        if f.lead is None or not f.lead.terms:
            raise DomainError(
                f"{label} diverges at 0 without a leading-term model")
        if f.lead.min_rho <= 0.0:
            raise DomainError(
                f"{label} is not integrable at 0 (exponent "
                f"{f.lead.min_rho:g})")


def _require_shared_uniform(f: SampledFunction,
                            g: SampledFunction) -> float:
    if not f.grid.same_as(g.grid):
        raise GridMismatchError("operands live on different grids")
    return f.grid.spacing()


def _head_value(lead: Optional[LeadingTerms]) -> float:
    if lead is None or not lead.terms:
        return 0.0
    return lead.limit0()


# --- convolution ----------------------------------------------------------

def _product_lead(f: SampledFunction,
                  g: SampledFunction) -> Optional[LeadingTerms]:
    if not (_has_model(f) and _has_model(g)):
        return None
    terms = []
    for cf, rf in f.lead.terms:
        for cg, rg in g.lead.terms:
            s = rf + rg
            if s <= RHO_PRODUCT_CAP:
                terms.append((cf * cg, s))
    if not terms:
        return None
    return LeadingTerms(tuple(terms), min(f.lead.radius, g.lead.radius))


def _abs_layer_correction(fv: np.ndarray, g: SampledFunction, h: float,
                          npts: int) -> np.ndarray:
    """Swap PL cells of g for exact model moments inside g's layer.

    Covers the slot where g is sampled in absolute time (cells near
    s = 0 of the integral of f(t-s) g(s) ds).
    """
    cells = npts - 1
    layer = _layer_cells(g.lead, h, cells)
    if layer == 0:
        return np.zeros(npts)
    ts = h * np.arange(npts)
    A, B = _combined_cell_moments(g.lead, h, cells, layer)
    out = _pair_conv(fv, A, B)
    pgv = _model_node_values(g.lead, ts, layer)
    P, Q = _pl_cells(pgv, h)
    P[layer:] = 0.0
    Q[layer:] = 0.0
    out -= _pair_conv(fv, P, Q)
    return out


def _rel_layer_correction(gv: np.ndarray, f: SampledFunction, h: float,
                          npts: int) -> np.ndarray:
    """Same swap for the factor evaluated at t - s (distance indexed)."""
    cells = npts - 1
    layer = _layer_cells(f.lead, h, cells)
    if layer == 0:
        return np.zeros(npts)
    ts = h * np.arange(npts)
    mu1 = np.zeros(npts)
    nu = np.zeros(npts)
    for coef, rho in f.lead.terms:
        w0, w1 = _moment_arrays(rho, h, layer)
        mu1[1: layer + 1] += coef * w1
        nu[1: layer + 1] += coef * (w0 - w1)
    out = _rel_apply(gv, mu1, nu)
    pfv = _model_node_values(f.lead, ts, layer)
    Pr = np.zeros(npts)
    Qr = np.zeros(npts)
    Pr[1: layer + 1] = h * (pfv[:layer] / 3.0 + pfv[1: layer + 1] / 6.0)
    Qr[1: layer + 1] = h * (pfv[:layer] / 6.0 + pfv[1: layer + 1] / 3.0)
    out -= _rel_apply(gv, Qr, Pr)
    return out


def convolve(f: SampledFunction, g: SampledFunction) -> SampledFunction:
    """(f * g)(t) on the shared uniform grid of the operands.

    Both samples must be finite at every node; integrands that diverge
    at 0 go through convolve_kernel_g with an explicit kernel exponent.
    """
    if f.is_singular or g.is_singular:
        raise DomainError(
            "convolve needs finite samples; divergent factors belong"
            " to convolve_kernel_g")
    return _convolve_any(f, g)


def _convolve_any(f: SampledFunction, g: SampledFunction) -> SampledFunction:
    """Convolution core; also accepts modelled singular factors."""
    h = _require_shared_uniform(f, g)
    _check_integrable(f, "left factor")
    _check_integrable(g, "right factor")
    npts = f.values.shape[0]
    fv = _star_values(f)
    gv = _star_values(g)
    P, Q = _pl_cells(gv, h)
    out = _pair_conv(fv, P, Q)
    if _has_model(g):
        out += _abs_layer_correction(fv, g, h, npts)
    if _has_model(f):
        out += _rel_layer_correction(gv, f, h, npts)
    lead = _product_lead(f, g)
    out[0] = _head_value(lead)
    if lead is not None and lead.terms:
        # The first nodes carry interpolation-defect products of both
        # factors, which the cell corrections cannot remove; the product
        # model is sharper there. The patch width shrinks with the cell
        # count so refinement still reduces the stitched error.
        cells = npts - 1
        m_rep = min(_layer_cells(lead, h, cells), math.isqrt(cells) + 1)
        if m_rep >= 1:
            ts_rep = h * np.arange(1, m_rep + 1)
            out[1: m_rep + 1] = lead.evaluate(ts_rep)
    return SampledFunction(f.grid, out, lead)


def convolve_kernel_g(gamma: float, f: SampledFunction) -> SampledFunction:
    """(g_gamma * f)(t) with the kernel integrated exactly on every cell."""
    if not 0.0 < gamma < 2.0:
        raise DomainError(
            f"kernel exponent must lie in (0, 2), got {gamma:g}")
    _check_integrable(f, "operand")
    h = f.grid.spacing()
    npts = f.values.shape[0]
    cells = npts - 1
    fv = _star_values(f)
    w0, w1 = _moment_arrays(gamma, h, cells)
    mu1 = np.zeros(npts)
    nu = np.zeros(npts)
    mu1[1:] = w1
    nu[1:] = w0 - w1
    out = _rel_apply(fv, mu1, nu)
    lead_out = None
    if _has_model(f):
        lead = f.lead
        layer = _layer_cells(lead, h, cells)
        ts = h * np.arange(npts)
        t_layer = h * layer
        with np.errstate(divide="ignore"):
            xs = np.minimum(t_layer / ts[1:], 1.0)
        scale = float(np.max(np.abs(fv))) * h + 1e-300
        exact = np.zeros(npts)
        for coef, rho in lead.terms:
            if layer >= cells:
                frac = None
            else:
                # the term only acts through its mass inside the layer
                mass = abs(coef) * t_layer ** rho / math.gamma(rho + 1.0)
                if mass < _TERM_PRUNE * scale:
                    continue
                frac = betainc(rho, gamma, xs)
            full = (coef / math.gamma(rho + gamma)) * (
                ts[1:] ** (rho + gamma - 1.0))
            exact[1:] += full if frac is None else full * frac
        pfv = _model_node_values(lead, ts, layer)
        out = out + exact - _abs_apply(pfv, mu1, nu, layer)
        lead_out = lead.shifted(gamma)
        out[0] = _head_value(lead_out)
    else:
        out[0] = 0.0
    return SampledFunction(f.grid, out, lead_out)


def cumulative_integral(f: SampledFunction) -> SampledFunction:
    """Running integral of f from 0, node by node."""
    return convolve_kernel_g(1.0, f)


def integrate(f: SampledFunction) -> float:
    """Integral of f over the whole grid."""
    return float(cumulative_integral(f).values[-1])


def scale_by_t(f: SampledFunction) -> SampledFunction:
    """Pointwise t * f(t); model terms shift up one power."""
    _check_integrable(f, "operand")
    vals = np.array(f.values * f.grid.nodes, dtype=float)
    lead = None
    if _has_model(f):
        lead = LeadingTerms(
            tuple((c * r, r + 1.0) for c, r in f.lead.terms),
            f.lead.radius)
    if np.isnan(vals[0]):
        vals[0] = _head_value(lead)
    return SampledFunction(f.grid, vals, lead)


# --- fractional derivatives ----------------------------------------------

def _central_diff_1(vals: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(vals)
    out[1:-1] = (vals[2:] - vals[:-2]) / (2.0 * h)
    out[0] = (-3.0 * vals[0] + 4.0 * vals[1] - vals[2]) / (2.0 * h)
    out[-1] = (3.0 * vals[-1] - 4.0 * vals[-2] + vals[-3]) / (2.0 * h)
    return out


def _central_diff_2(vals: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(vals)
    out[1:-1] = (vals[2:] - 2.0 * vals[1:-1] + vals[:-2]) / (h * h)
    if vals.size >= 4:
        out[0] = (2.0 * vals[0] - 5.0 * vals[1] + 4.0 * vals[2]
                  - vals[3]) / (h * h)
        out[-1] = (2.0 * vals[-1] - 5.0 * vals[-2] + 4.0 * vals[-3]
                   - vals[-4]) / (h * h)
    else:
        out[0] = out[1]
        out[-1] = out[1]
    return out


def _alpha_for(regime: Regime, alpha: float) -> None:
    if regime is Regime.SUB and not 0.0 < alpha <= 1.0:
        raise DomainError(
            f"order {alpha:g} outside (0, 1] for the sub-diffusive range")
    if regime is Regime.SUPER and not 1.0 < alpha <= 2.0:
        raise DomainError(
            f"order {alpha:g} outside (1, 2] for the super-diffusive range")


def _derivative_head(vals: np.ndarray,
                     lead: Optional[LeadingTerms]) -> None:
    """Node-0 value from the output model when one exists."""
    if lead is not None and lead.terms:
        vals[0] = lead.limit0()


def _layer_exact_kernel(lead: LeadingTerms, order_drop: float,
                        kernel: float, ts: np.ndarray,
                        layer: int) -> np.ndarray:
    """Integral of the kernel against the model's order_drop-th derivative
    over [0, t_layer], telescoped to one incomplete-beta factor per term.
    """
    npts = ts.shape[0]
    t_layer = ts[1] * layer if npts > 1 else 0.0
    out = np.zeros(npts)
    cells = npts - 1
    xs = np.minimum(t_layer / ts[1:], 1.0)
    for coef, rho in lead.terms:
        a = rho - order_drop
        if a <= 0.0:
            # constant and linear model parts drop out of the stencil too
            continue
        if layer >= cells:
            frac = None
        else:
            mass = abs(coef) * t_layer ** a / math.gamma(a + 1.0)
            if mass < _TERM_PRUNE:
                continue
            frac = betainc(a, kernel, xs)
        target = a + kernel
        full = (coef / math.gamma(target)) * ts[1:] ** (target - 1.0)
        out[1:] += full if frac is None else full * frac
    return out


def caputo_derivative(f: SampledFunction, alpha: float,
                      regime: Regime) -> SampledFunction:
    """Caputo derivative of order alpha over the sample's grid.

    Sub-diffusive range uses the L1 construction (piecewise constant
    slopes against the power kernel); super-diffusive uses interpolated
    second differences. Inside the model layer the scheme's action on
    the modelled part is swapped for the analytic derivative.
    """
    _alpha_for(regime, alpha)
    if f.values.size < 3:
        raise GridTooCoarseError("need at least three nodes")
    if f.is_singular:
        raise DomainError("derivative of a sample divergent at 0")
    h = f.grid.spacing()
    npts = f.values.shape[0]
    cells = npts - 1
    ts = f.grid.nodes
    if regime is Regime.SUB:
        if alpha == 1.0:
            out = _central_diff_1(f.values, h)
            lead_out = (f.lead.without(1.0).shifted(-1.0)
                        if _has_model(f) else None)
            _derivative_head(out, lead_out)
            return SampledFunction(f.grid, out, lead_out)
        w0, _ = _moment_arrays(1.0 - alpha, h, cells)
        wz = np.zeros(npts)
        wz[1:] = w0 / h
        dr = np.diff(f.values)
        out = _conv(dr, wz, npts)
        lead_out = None
        if _has_model(f):
            lead = f.lead
            layer = _layer_cells(lead, h, cells)
            if layer >= 1:
                pfv = _model_node_values(lead, ts, layer)
                dm = np.diff(pfv)
                dm[layer:] = 0.0
                out -= _conv(dm, wz, npts)
                out += _layer_exact_kernel(lead, 1.0, 1.0 - alpha, ts,
                                           layer)
            lead_out = lead.without(1.0).shifted(-alpha)
        _derivative_head(out, lead_out)
        return SampledFunction(f.grid, out, lead_out)
    if alpha == 2.0:
        if f.values.size < 4:
            raise GridTooCoarseError("need at least four nodes")
        out = _central_diff_2(f.values, h)
        lead_out = (f.lead.without(1.0, 2.0).shifted(-2.0)
                    if _has_model(f) else None)
        _derivative_head(out, lead_out)
        return SampledFunction(f.grid, out, lead_out)
    if f.values.size < 4:
        raise GridTooCoarseError("need at least four nodes")
    w0, w1 = _moment_arrays(2.0 - alpha, h, cells)
    mu1 = np.zeros(npts)
    nu = np.zeros(npts)
    mu1[1:] = w1
    nu[1:] = w0 - w1
    d2 = _central_diff_2(f.values, h)
    out = _rel_apply(d2, mu1, nu)
    lead_out = None
    if _has_model(f):
        lead = f.lead
        loose = [r for _, r in lead.terms
                 if r < 2.0 - 1e-12 and abs(r - 1.0) > 1e-12]
        if loose:
            raise DomainError(
                "model term with exponent below 2 admits no"
                " second-order derivative at 0")
        layer = _layer_cells(lead, h, cells)
        if layer >= 1:
            pfv = _model_node_values(lead, ts, layer + 2)
            d2m = _central_diff_2(pfv, h)
            out -= _abs_apply(d2m, mu1, nu, layer)
            out += _layer_exact_kernel(lead, 2.0, 2.0 - alpha, ts, layer)
        lead_out = lead.without(1.0, 2.0).shifted(-alpha)
    _derivative_head(out, lead_out)
    return SampledFunction(f.grid, out, lead_out)


def rl_derivative(f: SampledFunction, alpha: float,
                  regime: Regime) -> SampledFunction:
    """Riemann-Liouville derivative: classical derivative of the
    fractional integral of complementary order.

    The difference step is corrected node by node inside the model
    layer, replacing the stencil's action on the model with the model's
    analytic derivative. Entries at t = 0 may be nan when the
    derivative diverges there.
    """
    _alpha_for(regime, alpha)
    if f.values.size < 3:
        raise GridTooCoarseError("need at least three nodes")
    _check_integrable(f, "operand")
    h = f.grid.spacing()
    order = 1 if regime is Regime.SUB else 2
    if alpha == float(order):
        if f.is_singular:
            raise DomainError("classical derivative of a divergent sample")
        if order == 2 and f.values.size < 4:
            raise GridTooCoarseError("need at least four nodes")
        diff = _central_diff_1 if order == 1 else _central_diff_2
        drops = (1.0,) if order == 1 else (1.0, 2.0)
        lead_out = (f.lead.without(*drops).shifted(-float(order))
                    if _has_model(f) else None)
        out = diff(f.values, h)
        _derivative_head(out, lead_out)
        return SampledFunction(f.grid, out, lead_out)
    if order == 2 and f.values.size < 4:
        raise GridTooCoarseError("need at least four nodes")
    inner = convolve_kernel_g(float(order) - alpha, f)
    vals = _star_values(inner)
    diff = _central_diff_1 if order == 1 else _central_diff_2
    out = diff(vals, h)
    lead_out = None
    if _has_model(inner):
        lead = inner.lead
        layer = _layer_cells(lead, h, f.grid.n_cells)
        lead_out = lead.shifted(-float(order))
        # replace the stencil's action on the model inside the layer;
        # with full coverage the end stencil is one-sided on both sides
        # of the swap, so it cancels there too
        cells = f.grid.n_cells
        upto = cells if layer >= cells else max(0, layer - order)
        if upto >= 1:
            pad = layer + order + 1
            pfv = _model_node_values(lead, f.grid.nodes, pad)
            stencil = diff(pfv, h)
            analytic = np.zeros(upto)
            if lead_out.terms:
                analytic = lead_out.evaluate(f.grid.nodes[1: upto + 1])
            out[1: upto + 1] += analytic - stencil[1: upto + 1]
        _derivative_head(out, lead_out)
    else:
        # without a model the stencil value at 0 is meaningless
        out[0] = math.nan
    return SampledFunction(f.grid, out, lead_out)
