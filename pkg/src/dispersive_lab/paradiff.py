"""Paraproducts, symbol seminorms, symbol smoothing and measured remainders.

Two quantizations are provided.  The Littlewood-Paley form

    T_a f = sum_{k >= 4} S_{k-3}(a) Delta_k f

is the one used downstream.  The double-cutoff form quantizes a full symbol
``a(x, xi)``: the output coefficient at ``xi`` collects input frequencies
``eta`` weighted by ``chi(xi - eta, eta) a_hat(xi - eta, eta) psi(eta)``, where
``a_hat(theta, eta)`` is the x-Fourier coefficient of ``a(., eta)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial
from typing import Callable, Sequence

import numpy as np

from .spectral import (
    CUTOFFS,
    Field,
    Grid1D,
    apply_multiplier,
    derivative,
    holder_norm,
    l2_norm,
    lp_decompose,
    lp_symbol,
    smooth_step,
    sobolev_norm,
)
from ._validation import check_same_grid

DEFAULT_CUTPAIR = (0.05, 0.1)


# --------------------------------------------------------------------------
# xi-factors


def power_factor(p: float, odd: bool = False) -> Callable[[np.ndarray, int], np.ndarray]:
    """``xi -> |xi|^p`` (times ``sgn xi`` when ``odd``) and its derivatives, off ``xi = 0``."""

    def fn(xi, k=0):
        xi = np.asarray(xi, dtype=float)
        r = np.abs(xi)
        coef, e = 1.0, int(odd)
        for i in range(k):
            coef *= p - i
            e += 1
        with np.errstate(divide="ignore", invalid="ignore"):
            out = coef * np.where(r > 0, r ** (p - k), 0.0) * np.sign(xi) ** (e % 2)
        return out

    return fn


def monomial_factor(n: int) -> Callable[[np.ndarray, int], np.ndarray]:
    """``xi -> xi^n`` and its derivatives."""

    def fn(xi, k=0):
        xi = np.asarray(xi, dtype=float)
        if k > n:
            return np.zeros_like(xi)
        return factorial(n) / factorial(n - k) * xi ** (n - k)

    return fn


# --------------------------------------------------------------------------
# symbols


@dataclass(frozen=True)
class SymbolFn:
    """Symbol ``a(x, xi)`` sampled on the nodes of ``grid``.

    ``evaluate(xi)`` returns an ``(n_points, len(xi))`` array and
    ``xi_derivative(xi, k)`` the ``k``-th ``xi`` derivative for ``k <= k_max``.
    """

    grid: Grid1D
    derivative_fn: Callable[[np.ndarray, int], np.ndarray]
    order_m: float
    regularity_rho: float
    k_max: int
    label: str = ""
    terms: tuple | None = None

    def evaluate(self, xi) -> np.ndarray:
        return self.xi_derivative(xi, 0)

    def xi_derivative(self, xi, k: int) -> np.ndarray:
        if k > self.k_max:
            raise ValueError(f"symbol {self.label!r} provides xi-derivatives up to {self.k_max}")
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        out = np.asarray(self.derivative_fn(xi, k), dtype=complex)
        return np.broadcast_to(out, (self.grid.n_points, xi.size))

    def x_derivative(self, xi, alpha: int, k: int = 0) -> np.ndarray:
        """``d_x^alpha d_xi^k a`` by spectral differentiation in x."""
        vals = self.xi_derivative(xi, k)
        if alpha == 0:
            return vals
        th = self.grid.fft_frequencies[:, None]
        mult = (1j * th) ** alpha
        if alpha % 2:
            mult = mult.copy()
            mult[self.grid.n_points // 2] = 0.0
        return np.fft.ifft(np.fft.fft(vals, axis=0) * mult, axis=0)

    @classmethod
    def separable(cls, grid, terms, order_m, regularity_rho=np.inf, k_max=4, label=""):
        """``sum_i V_i(x) p_i(xi)`` from pairs of node arrays (or Fields) and xi-factors."""
        cols = [(np.asarray(v.values if isinstance(v, Field) else v, dtype=complex), p) for v, p in terms]
        for v, _ in cols:
            if v.shape not in ((grid.n_points,), ()):
                raise ValueError("coefficient does not match grid")

        def fn(xi, k):
            out = np.zeros((grid.n_points, xi.size), dtype=complex)
            for v, p in cols:
                out += np.multiply.outer(np.broadcast_to(v, (grid.n_points,)), p(xi, k))
            return out

        return cls(
            grid, fn, float(order_m), float(regularity_rho), int(k_max), label, tuple(cols)
        )

    @classmethod
    def multiplier(cls, grid, p, order_m, k_max=4, label=""):
        """x-independent symbol ``p(xi)``."""
        return cls.separable(grid, [(np.ones(grid.n_points), p)], order_m, np.inf, k_max, label)

    @classmethod
    def from_field(cls, f: Field, regularity_rho=np.inf, label=""):
        """x-only symbol ``a(x)`` of order 0."""
        return cls.separable(f.grid, [(f.values, monomial_factor(0))], 0.0, regularity_rho, 8, label)


def compose_symbols(a: SymbolFn, b: SymbolFn, rho: float) -> SymbolFn:
    """``a # b = sum_{alpha < rho} (1 / (i^alpha alpha!)) d_xi^alpha a d_x^alpha b``."""
    check_same_grid(a, b)
    alphas = [al for al in range(int(np.ceil(rho))) if al < rho]
    kmax = min(a.k_max - alphas[-1], b.k_max)
    if kmax < 0:
        raise ValueError("symbols lack the xi-derivatives needed for this rho")

    def fn(xi, k):
        out = np.zeros((a.grid.n_points, xi.size), dtype=complex)
        for al in alphas:
            c = 1.0 / (1j**al * factorial(al))
            for i in range(k + 1):
                binom = factorial(k) / (factorial(i) * factorial(k - i))
                out += c * binom * a.xi_derivative(xi, al + i) * b.x_derivative(xi, al, k - i)
        return out

    return SymbolFn(
        a.grid,
        fn,
        a.order_m + b.order_m,
        min(a.regularity_rho, b.regularity_rho) - (alphas[-1] if alphas else 0),
        kmax,
        f"({a.label})#({b.label})",
    )


# --------------------------------------------------------------------------
# paraproducts


def _lp_top(grid: Grid1D) -> int:
    return grid.max_band()


def paraproduct_lp(a: Field, f: Field) -> Field:
    """``sum_{k=4}^{K} S_{k-3}(a) Delta_k f`` with ``K`` the top resolvable band."""
    check_same_grid(a, f)
    return smoothed_paraproduct(a, f, 1.0)


def smoothed_paraproduct(w: Field, f: Field, delta: float) -> Field:
    """``sum_{k>=4} S_{[delta (k-3)]}(w) Delta_k f``; ``delta = 1`` is the plain paraproduct."""
    check_same_grid(w, f)
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    grid = f.grid
    top = _lp_top(grid)
    blocks = lp_decompose(f, top)
    out = np.zeros(grid.n_points, dtype=complex)
    cache = {}
    for k in range(4, top + 1):
        m = int(np.floor(delta * (k - 3) + 1e-12))
        if m not in cache:
            cache[m] = apply_multiplier(w, lp_symbol(m)).values
        out += cache[m] * blocks[k].values
    return Field(grid, out)


def _theta_cutoff(theta, eta, eps1, eps2):
    ratio = np.abs(theta) / np.maximum(np.abs(eta), 1e-300)
    return 1 - smooth_step((ratio - eps1) / (eps2 - eps1))


def paraproduct_symbol(
    a: SymbolFn, f: Field, cutpair: Sequence[float] = DEFAULT_CUTPAIR, chunk: int = 256
) -> Field:
    """Double-cutoff quantization of a full symbol.

    Parameters
    ----------
    a : SymbolFn
        Symbol sampled on the nodes of ``f.grid``.
    f : Field
    cutpair : (eps1, eps2)
        The x-frequency ``theta`` of ``a(., eta)`` is kept fully when
        ``|theta| <= eps1 |eta|`` and dropped when ``|theta| >= eps2 |eta|``.

    Returns
    -------
    Field
    """
    eps1, eps2 = map(float, cutpair)
    if not (0 < eps1 < eps2 <= 0.25):
        raise ValueError("cut parameters must satisfy 0 < eps1 < eps2 <= 1/4")
    if a.grid != f.grid:
        raise ValueError("symbol and field live on different grids")
    grid = f.grid
    n = grid.n_points
    xi = grid.fft_frequencies
    fh = f.hat
    weight = CUTOFFS.psi(xi) * fh
    scale = np.max(np.abs(fh)) if fh.size else 0.0
    idx = np.nonzero((np.abs(weight) > 1e-15 * scale) & (weight != 0))[0]
    out = np.zeros(n, dtype=complex)
    theta = xi[:, None]
    tidx = np.arange(n)[:, None]
    for s in range(0, idx.size, chunk):
        cols = idx[s : s + chunk]
        eta = xi[cols]
        coef = np.fft.fft(a.evaluate(eta), axis=0) / n
        coef *= _theta_cutoff(theta, eta[None, :], eps1, eps2) * weight[cols][None, :]
        target = (tidx + cols[None, :]) % n
        out += np.bincount(target.ravel(), coef.real.ravel(), n) + 1j * np.bincount(
            target.ravel(), coef.imag.ravel(), n
        )
    return Field.from_hat(grid, out)


# --------------------------------------------------------------------------
# seminorm


def seminorm(a: SymbolFn, m: float, rho: float, p_max: int = 10) -> float:
    """Sampled ``M^m_rho(a)``.

    Maximum over ``xi = +-2^p`` (``p = -1..p_max``) and ``alpha <= 3/2 + rho`` of
    ``(1 + |xi|)^{alpha - m} * holder_norm(d_xi^alpha a(., xi), rho)``.
    """
    amax = int(np.floor(1.5 + rho + 1e-12))
    if a.k_max < amax:
        raise ValueError(f"seminorm needs xi-derivatives up to {amax}, symbol has {a.k_max}")
    ps = 2.0 ** np.arange(-1, p_max + 1)
    xis = np.concatenate([-ps[::-1], ps])
    best = 0.0
    for al in range(amax + 1):
        vals = a.xi_derivative(xis, al)
        for c, x in enumerate(xis):
            col = Field(a.grid, vals[:, c])
            if not np.any(col.values):
                continue
            v = (1 + abs(x)) ** (al - m) * holder_norm(col, rho, check_band=False)
            best = max(best, v)
    return float(best)


# --------------------------------------------------------------------------
# measured defects


def smoothing_defect(w: Field, f_j: Field, delta: float, j: int | None = None) -> float:
    """``||(T_w - T_w^delta) f_j||_{L2} / ||f_j||_{L2}``."""
    d = paraproduct_lp(w, f_j) - smoothed_paraproduct(w, f_j, delta)
    return l2_norm(d) / l2_norm(f_j)


def commutator_block(a: Field, u: Field, j: int, sigma: float) -> float:
    """``||Delta_j T_a u - T_a Delta_j u||_{H^{sigma+1}}``."""
    from .spectral import lp_block

    lhs = lp_block(paraproduct_lp(a, u), j)
    rhs = paraproduct_lp(a, lp_block(u, j))
    return sobolev_norm(lhs - rhs, sigma + 1)


def composition_defect(
    a: SymbolFn, b: SymbolFn, rho: float, f_j: Field, cutpair=DEFAULT_CUTPAIR
) -> float:
    """``||(T_a T_b - T_{a#b}) f_j||_{L2} / ||f_j||_{L2}`` in the double-cutoff quantization."""
    ab = compose_symbols(a, b, rho)
    lhs = paraproduct_symbol(a, paraproduct_symbol(b, f_j, cutpair), cutpair)
    rhs = paraproduct_symbol(ab, f_j, cutpair)
    return l2_norm(lhs - rhs) / l2_norm(f_j)


def bony_remainder(a: Field, b: Field) -> Field:
    """``ab - T_a b - T_b a``."""
    return a * b - paraproduct_lp(a, b) - paraproduct_lp(b, a)


# --------------------------------------------------------------------------
# synthetic inputs


def synthetic_sobolev_field(grid: Grid1D, s: float, rng, n_max: int | None = None) -> Field:
    """Real field with one mode per dyadic band and ``||Delta_n W||_inf = 2^{-n(s - 3/2)}``.

    The mode of band ``n`` sits at frequency ``2^n`` where ``Delta_n`` acts as the
    identity and its neighbours vanish; phases are drawn from ``rng``.
    """
    n_max = grid.max_band() - 1 if n_max is None else n_max
    x = grid.nodes
    vals = np.zeros(grid.n_points)
    for n in range(1, n_max + 1):
        ph = rng.uniform(0, 2 * np.pi)
        vals += 2.0 ** (-n * (s - 1.5)) * np.cos(2.0**n * x + ph)
    return Field(grid, vals)


def dyadic_field(grid: Grid1D, j: int, rng, real: bool = False) -> Field:
    """Random field with spectrum inside ``0.75 * 2^j <= |xi| <= 1.5 * 2^j``."""
    xi = np.abs(grid.fft_frequencies)
    sel = (xi >= 0.75 * 2**j) & (xi <= 1.5 * 2**j)
    hat = np.zeros(grid.n_points, dtype=complex)
    hat[sel] = rng.normal(size=sel.sum()) + 1j * rng.normal(size=sel.sum())
    f = Field.from_hat(grid, hat)
    return Field(grid, f.values.real) if real else f


def random_low_field(grid: Grid1D, kmax: int, rng, w1_norm: float | None = None) -> Field:
    """Real random trigonometric polynomial of degree ``kmax``, optionally scaled to a given ``W^{1,inf}`` norm."""
    x = grid.nodes
    vals = np.zeros(grid.n_points)
    for k in range(kmax + 1):
        amp = rng.normal() / (1 + k) ** 2
        vals += amp * np.cos(k * 2 * np.pi / grid.length * x + rng.uniform(0, 2 * np.pi))
    f = Field(grid, vals)
    if w1_norm is not None:
        f = f * (w1_norm / holder_norm(f, 1))
    return f


def block_slope(js, values) -> float:
    """Least-squares slope of ``log2(values)`` against ``js``."""
    return float(np.polyfit(np.asarray(js, float), np.log2(np.asarray(values, float)), 1)[0])
