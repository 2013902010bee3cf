"""Arc-length change of variables, paracomposition, pulled-back symbols and the gauge symbol.

On a torus of length ``L`` the arc-length map ``chi(x) = int_0^x sqrt(1 + eta_x^2)``
is ``m x + P(x)`` with ``m`` the mean stretch and ``P`` periodic.  It maps the
source torus onto one of length ``m L``; the inverse ``kappa`` is stored on an
image grid with the same node count, split as ``kappa(y) = y / m + rho(y)``.
Only the periodic part ``rho`` enters paraproducts: the linear part has all
its spectrum at frequency zero, where every block of index at least 4 vanishes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .paradiff import DEFAULT_CUTPAIR, SymbolFn, paraproduct_lp, paraproduct_symbol, power_factor
from .spectral import (
    Field,
    Grid1D,
    antiderivative,
    derivative,
    evaluate_at,
    high_frequency_fraction,
    l2_norm,
)
from ._validation import check_real


class ResolutionWarning(UserWarning):
    """A composed field is not resolved on its grid to the requested tolerance."""


@dataclass(frozen=True)
class Diffeo1D:
    """The pair ``chi`` / ``kappa`` built from a surface profile.

    Attributes
    ----------
    eta : Field
        Real profile on the source grid.
    chi_prime : Field
        ``sqrt(1 + eta_x^2)``, at least 1 everywhere.
    mean_stretch : float
        Spatial mean of ``chi_prime``.
    chi_periodic : Field
        ``chi(x) - mean_stretch * x`` on the source grid, zero at ``x = 0``.
    chi_values : ndarray
        ``chi`` at the source nodes.
    image_grid : Grid1D
        Grid of length ``mean_stretch * L`` carrying ``kappa``.
    kappa : ndarray
        ``kappa`` at the image nodes.
    rho_part : Field
        ``kappa(y) - y / mean_stretch`` on the image grid.
    """

    eta: Field
    chi_prime: Field
    mean_stretch: float
    chi_periodic: Field
    chi_values: np.ndarray
    image_grid: Grid1D
    kappa: np.ndarray
    rho_part: Field

    @property
    def grid(self) -> Grid1D:
        return self.eta.grid

    @property
    def is_identity(self) -> bool:
        return not np.any(self.eta.values)

    def chi_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.mean_stretch * x + evaluate_at(self.chi_periodic, x).real

    def chi_prime_at(self, x) -> np.ndarray:
        return evaluate_at(self.chi_prime, np.asarray(x, dtype=float)).real

    def kappa_at(self, y, bisect_tol: float = 1e-12, newton_steps: int = 2) -> np.ndarray:
        """Invert ``chi`` at arbitrary points: bracketed bisection, then Newton polish."""
        y = np.asarray(y, dtype=float)
        if self.is_identity:
            return y.copy()
        return _invert(self, y, bisect_tol, newton_steps)

    def kappa_prime(self) -> np.ndarray:
        """``d kappa / dy`` at the image nodes, equal to ``1 / chi'(kappa)``."""
        return 1.0 / self.chi_prime_at(self.kappa)


def _invert(d: Diffeo1D, y, bisect_tol, newton_steps):
    grid = d.grid
    L = grid.length
    m = d.mean_stretch
    period = m * L
    # shift to the fundamental period, invert there, shift back
    shift = np.floor(y / period)
    yy = y - shift * period
    x_ext = np.append(grid.nodes, L)
    c_ext = np.append(d.chi_values, period)
    cp_ext = np.append(d.chi_prime.values.real, d.chi_prime.values.real[0])
    spline = CubicHermiteSpline(x_ext, c_ext, cp_ext)
    i = np.clip(np.searchsorted(c_ext, yy, side="right") - 1, 0, grid.n_points - 1)
    lo, hi = x_ext[i].copy(), x_ext[i + 1].copy()
    while np.max(hi - lo) > bisect_tol:
        mid = 0.5 * (lo + hi)
        left = spline(mid) <= yy
        lo = np.where(left, mid, lo)
        hi = np.where(left, hi, mid)
    x = 0.5 * (lo + hi)
    for _ in range(newton_steps):
        x = x - (d.chi_at(x) - yy) / d.chi_prime_at(x)
    return x + shift * L


def build_diffeo(eta: Field) -> Diffeo1D:
    """Build ``chi``, ``kappa`` and ``rho`` from a real, band-limited profile."""
    vals = check_real(eta.values, "eta")
    grid = eta.grid
    eta = Field(grid, vals)
    if not np.any(vals):
        ident = Field(grid, np.ones(grid.n_points))
        zero = Field(grid, np.zeros(grid.n_points))
        return Diffeo1D(eta, ident, 1.0, zero, grid.nodes.copy(), grid, grid.nodes.copy(), zero)
    ex = derivative(eta).values.real
    cp = Field(grid, np.sqrt(1 + ex**2))
    P, mean = antiderivative(cp)
    m = float(mean.real)
    P = Field(grid, P.values.real)
    chi_vals = m * grid.nodes + P.values.real
    image = Grid1D(grid.n_points, m * grid.length)
    proto = Diffeo1D(eta, cp, m, P, chi_vals, image, np.empty(0), Field(image, np.zeros(image.n_points)))
    kap = _invert(proto, image.nodes, 1e-12, 2)
    rho = Field(image, kap - image.nodes / m)
    return Diffeo1D(eta, cp, m, P, chi_vals, image, kap, rho)


def compose_with_kappa(d: Diffeo1D, u: Field, tol: float = 1e-10) -> Field:
    """``u o kappa`` on the image grid, by trigonometric interpolation of ``u``."""
    if u.grid != d.grid:
        raise ValueError("field must live on the source grid of the diffeomorphism")
    if d.is_identity:
        return Field(d.image_grid, u.values)
    out = Field(d.image_grid, evaluate_at(u, d.kappa))
    frac = high_frequency_fraction(out, 0.75 * d.image_grid.max_frequency)
    if frac > tol:
        warnings.warn(
            f"u o kappa keeps relative mass {frac:.1e} near Nyquist of the image grid",
            ResolutionWarning,
            stacklevel=2,
        )
    return out


def compose_with_chi(d: Diffeo1D, v: Field) -> Field:
    """``v o chi`` on the source grid for ``v`` on the image grid."""
    if v.grid != d.image_grid:
        raise ValueError("field must live on the image grid")
    if d.is_identity:
        return Field(d.grid, v.values)
    return Field(d.grid, evaluate_at(v, d.chi_values))


def paracompose(d: Diffeo1D, u: Field) -> Field:
    """``kappa^* u = u o kappa - T_{(d_x u) o kappa} rho``."""
    uk = compose_with_kappa(d, u)
    if d.is_identity:
        return uk
    duk = compose_with_kappa(d, derivative(u))
    return uk - paraproduct_lp(duk, d.rho_part)


def paracompose_correction(d: Diffeo1D, u: Field) -> Field:
    """``T_{(d_x u) o kappa} rho``, the part removed by :func:`paracompose`."""
    if d.is_identity:
        return Field(d.image_grid, np.zeros(d.image_grid.n_points))
    return paraproduct_lp(compose_with_kappa(d, derivative(u)), d.rho_part)


def pullback_symbol(d: Diffeo1D, a: SymbolFn) -> SymbolFn:
    """Leading term ``a^*(y, eta) = a(kappa(y), chi'(kappa(y)) eta)`` on the image grid."""
    if a.terms is None:
        raise ValueError("pullback needs a separable symbol")
    if a.grid != d.grid:
        raise ValueError("symbol must live on the source grid")
    img = d.image_grid
    if d.is_identity:
        c = np.ones(img.n_points)
        coefs = [np.broadcast_to(v, (img.n_points,)) for v, _ in a.terms]
    else:
        c = d.chi_prime_at(d.kappa)
        coefs = [
            evaluate_at(Field(d.grid, np.broadcast_to(v, (d.grid.n_points,))), d.kappa)
            for v, _ in a.terms
        ]
    factors = [p for _, p in a.terms]

    def fn(xi, k):
        out = np.zeros((img.n_points, xi.size), dtype=complex)
        arg = np.multiply.outer(c, xi)
        for v, p in zip(coefs, factors):
            out += (v * c**k)[:, None] * p(arg, k)
        return out

    return SymbolFn(img, fn, a.order_m, a.regularity_rho, a.k_max, f"pullback({a.label})")


def pullback_symbol_defect(d: Diffeo1D, a: SymbolFn, f_j: Field, cutpair=DEFAULT_CUTPAIR) -> float:
    """``||(kappa^* T_a - T_{a^*} kappa^*) f_j|| / ||f_j||``."""
    lhs = paracompose(d, paraproduct_symbol(a, f_j, cutpair))
    rhs = paraproduct_symbol(pullback_symbol(d, a), paracompose(d, f_j), cutpair)
    return l2_norm(lhs - rhs) / l2_norm(f_j)


def gauge_symbol(a_half: SymbolFn) -> SymbolFn:
    """Solve ``(3/2)|xi|^{1/2} sgn(xi) d_x g = -a_half`` with ``g(0, xi) = 0``.

    The right side is mean-removed in x before the spectral antiderivative, so the
    bracket ``{|xi|^{3/2}, g}`` equals ``-a_half`` plus its x-mean.
    """
    grid = a_half.grid
    inv = power_factor(-0.5, odd=True)  # sgn(xi) |xi|^{-1/2}
    th = grid.fft_frequencies[:, None]
    nz = th != 0

    def fn(xi, k):
        if np.any(np.abs(xi) < 0.5):
            raise ValueError("gauge symbol is only defined for |xi| >= 1/2")
        rhs = np.zeros((grid.n_points, xi.size), dtype=complex)
        for i in range(k + 1):
            binom = np.prod(range(k - i + 1, k + 1)) / np.prod(range(1, i + 1))
            rhs += binom * a_half.xi_derivative(xi, i) * inv(xi, k - i)[None, :]
        rhs *= -2.0 / 3.0
        hat = np.fft.fft(rhs, axis=0)
        hat[0] = 0.0
        hat[grid.n_points // 2] = 0.0
        hat = np.where(nz, hat / (1j * np.where(nz, th, 1.0)), 0.0)
        g = np.fft.ifft(hat, axis=0)
        return g - g[0:1]

    return SymbolFn(grid, fn, a_half.order_m - 0.5, a_half.regularity_rho + 1, a_half.k_max, "gauge")


def exp_i_symbol(g: SymbolFn) -> SymbolFn:
    """``exp(i g)`` with xi-derivatives up to order 2."""

    def fn(xi, k):
        g0 = g.xi_derivative(xi, 0)
        e = np.exp(1j * g0)
        if k == 0:
            return e
        g1 = g.xi_derivative(xi, 1)
        if k == 1:
            return 1j * g1 * e
        g2 = g.xi_derivative(xi, 2)
        return (1j * g2 - g1**2) * e

    return SymbolFn(g.grid, fn, 0.0, g.regularity_rho, min(2, g.k_max), "exp(ig)")


def poisson_bracket_dispersion(g: SymbolFn, xi) -> np.ndarray:
    """``{|xi|^{3/2}, g} = (3/2)|xi|^{1/2} sgn(xi) d_x g`` (the symbol is x-independent)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    return power_factor(1.5)(xi, 1)[None, :] * g.x_derivative(xi, 1)
