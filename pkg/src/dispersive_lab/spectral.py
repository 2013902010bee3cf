"""Periodic grids, sampled fields, Fourier multipliers and Littlewood-Paley blocks.

Conventions
-----------
A field ``f`` on a grid of length ``L`` with ``n`` nodes is stored by its node
values.  Its spectrum is the array of Fourier-series coefficients ``c_k`` with

    f(x) = sum_k c_k exp(i xi_k x),    xi_k = 2 pi k / L,

so that a single plane wave ``exp(i 4 x)`` has coefficient 1 at ``xi = 4``.
``Field.spectrum`` is ordered like ``Grid1D.frequencies`` (increasing);
``Field.hat`` is the same data in numpy FFT order, which is what the
operators use internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import cached_property, lru_cache
from math import comb
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_finite, check_positive, check_power_of_two, check_same_grid

DEFAULT_LENGTH = 256 * np.pi
DEFAULT_N_POINTS = 2**13


@dataclass(frozen=True)
class Grid1D:
    """Uniform periodic grid on ``[0, length)``."""

    n_points: int = DEFAULT_N_POINTS
    length: float = DEFAULT_LENGTH

    def __post_init__(self):
        object.__setattr__(self, "n_points", check_power_of_two(self.n_points))
        object.__setattr__(self, "length", check_positive(self.length, "length"))

    @property
    def spacing(self) -> float:
        return self.length / self.n_points

    @cached_property
    def nodes(self) -> np.ndarray:
        x = np.arange(self.n_points) * self.spacing
        x.flags.writeable = False
        return x

    @cached_property
    def frequencies(self) -> np.ndarray:
        """Frequencies ``2 pi k / length`` for ``k`` in ``[-n/2, n/2)``, increasing."""
        k = np.arange(-self.n_points // 2, self.n_points // 2)
        xi = 2 * np.pi * k / self.length
        xi.flags.writeable = False
        return xi

    @cached_property
    def fft_frequencies(self) -> np.ndarray:
        xi = 2 * np.pi * np.fft.fftfreq(self.n_points, d=self.spacing)
        xi.flags.writeable = False
        return xi

    @property
    def max_frequency(self) -> float:
        """Modulus of the unpaired Nyquist mode, ``pi n / length``."""
        return np.pi * self.n_points / self.length

    def max_band(self) -> int:
        """Largest dyadic index ``j`` whose block support ``2^{j+1}`` fits under Nyquist."""
        return int(np.floor(np.log2(self.max_frequency) + 1e-12)) - 1


@dataclass(frozen=True)
class Field:
    """Complex samples on a :class:`Grid1D` with a lazily computed spectrum."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.shape != (self.grid.n_points,):
            raise ValueError(f"values must have shape ({self.grid.n_points},), got {v.shape}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid1D, fn: Callable[[np.ndarray], np.ndarray]) -> "Field":
        return cls(grid, fn(grid.nodes))

    @classmethod
    def from_hat(cls, grid: Grid1D, hat: np.ndarray) -> "Field":
        hat = np.asarray(hat, dtype=complex)
        out = cls(grid, np.fft.ifft(hat) * grid.n_points)
        object.__setattr__(out, "hat", hat.copy())
        return out

    @classmethod
    def from_spectrum(cls, grid: Grid1D, spectrum: np.ndarray) -> "Field":
        return cls.from_hat(grid, np.fft.ifftshift(np.asarray(spectrum, dtype=complex)))

    @cached_property
    def hat(self) -> np.ndarray:
        """Fourier coefficients in FFT order."""
        h = np.fft.fft(self.values) / self.grid.n_points
        h.flags.writeable = False
        return h

    @property
    def spectrum(self) -> np.ndarray:
        """Fourier coefficients ordered like ``grid.frequencies``."""
        return np.fft.fftshift(self.hat)

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    def __add__(self, other):
        if isinstance(other, Field):
            check_same_grid(self, other)
            return Field(self.grid, self.values + other.values)
        return Field(self.grid, self.values + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Field):
            check_same_grid(self, other)
            return Field(self.grid, self.values - other.values)
        return Field(self.grid, self.values - other)

    def __mul__(self, other):
        if isinstance(other, Field):
            check_same_grid(self, other)
            return Field(self.grid, self.values * other.values)
        return Field(self.grid, self.values * other)

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)


@dataclass(frozen=True)
class MultiplierSpec:
    """A Fourier multiplier ``xi -> m(xi)`` with a text label."""

    evaluator: Callable[[np.ndarray], np.ndarray]
    description: str = ""


def apply_multiplier(f: Field, m: MultiplierSpec | Callable) -> Field:
    """Return the field whose coefficients are ``m(xi_k) * c_k``."""
    ev = m.evaluator if isinstance(m, MultiplierSpec) else m
    vals = np.asarray(ev(f.grid.fft_frequencies), dtype=complex)
    vals = np.broadcast_to(vals, f.hat.shape)
    check_finite(vals, "multiplier")
    return Field.from_hat(f.grid, f.hat * vals)


def derivative(f: Field, order: int = 1) -> Field:
    """Spectral derivative of integer order."""
    if order == 0:
        return f
    xi = f.grid.fft_frequencies
    mult = (1j * xi) ** order
    if order % 2 == 1:
        # the unpaired Nyquist mode has no consistent odd derivative
        mult[f.grid.n_points // 2] = 0.0
    return Field.from_hat(f.grid, f.hat * mult)


def antiderivative(f: Field) -> tuple[Field, complex]:
    """Periodic antiderivative of ``f - mean(f)`` vanishing at ``x = 0``, and the mean."""
    xi = f.grid.fft_frequencies
    hat = f.hat.copy()
    mean = hat[0]
    hat[0] = 0.0
    hat[f.grid.n_points // 2] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(xi != 0, hat / (1j * np.where(xi == 0, 1, xi)), 0.0)
    F = Field.from_hat(f.grid, out)
    return Field(f.grid, F.values - F.values[0]), mean


def evaluate_at(f: Field, points: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Trigonometric interpolation of ``f`` at arbitrary points (direct sum)."""
    pts = np.asarray(points, dtype=float).ravel()
    xi = f.grid.fft_frequencies.copy()
    hat = f.hat.copy()
    # split the Nyquist mode symmetrically so real data interpolates to real values
    nyq = f.grid.n_points // 2
    c_nyq = hat[nyq]
    hat[nyq] = 0.0
    out = np.empty(pts.size, dtype=complex)
    for s in range(0, pts.size, chunk):
        p = pts[s : s + chunk]
        out[s : s + chunk] = np.exp(1j * np.outer(p, xi)) @ hat + c_nyq * np.cos(
            f.grid.max_frequency * p
        )
    return out.reshape(np.shape(points))


# --------------------------------------------------------------------------
# smooth cutoffs


@lru_cache(maxsize=None)
def _e_poly(n: int) -> np.ndarray:
    """Coefficients of ``P_n`` with ``d^n/dt^n exp(-1/t) = exp(-1/t) P_n(1/t)`` for ``t > 0``."""
    P = np.polynomial.Polynomial([1.0])
    u2 = np.polynomial.Polynomial([0.0, 0.0, 1.0])
    for _ in range(n):
        P = u2 * (P - P.deriv())
    return P.coef


def _e_deriv(t, n: int):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    # below 1e-3 the factor exp(-1/t) underflows while P_n(1/t) may overflow
    pos = t > 1e-3
    tp = t[pos]
    out[pos] = np.exp(-1.0 / tp) * np.polynomial.polynomial.polyval(1.0 / tp, _e_poly(n))
    return out


def smooth_step(t, deriv: int = 0):
    """C-infinity step: 0 for ``t <= 0``, 1 for ``t >= 1``, built from ``exp(-1/t)``.

    ``deriv`` selects the derivative order (any non-negative integer).
    """
    if deriv < 0:
        raise ValueError("deriv must be non-negative")
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    # within 1e-3 of either end the exp(-1/t) factors underflow and the step is flat
    if deriv == 0:
        out[t >= 1 - 1e-3] = 1.0
    mid = (t > 1e-3) & (t < 1 - 1e-3)
    if not mid.any():
        return out
    tm = t[mid]
    g = [_e_deriv(tm, k) for k in range(deriv + 1)]
    G = [g[k] + (-1) ** k * _e_deriv(1 - tm, k) for k in range(deriv + 1)]
    # q = g / G, differentiated through g = q G
    q = []
    for n in range(deriv + 1):
        acc = g[n].copy()
        for k in range(1, n + 1):
            acc -= comb(n, k) * G[k] * q[n - k]
        q.append(acc / G[0])
    out[mid] = q[deriv]
    return out


def plateau(r, r0, r1, r2, r3, deriv: int = 0):
    """Bump in ``r``: 0 below ``r0``, 1 on ``[r1, r2]``, 0 above ``r3``."""
    r = np.asarray(r, dtype=float)
    up_t = (r - r0) / (r1 - r0)
    dn_t = (r - r2) / (r3 - r2)
    up = [smooth_step(up_t, k) / (r1 - r0) ** k for k in range(deriv + 1)]
    dn = [1 - smooth_step(dn_t)] + [
        -smooth_step(dn_t, k) / (r3 - r2) ** k for k in range(1, deriv + 1)
    ]
    return sum(comb(deriv, k) * up[k] * dn[deriv - k] for k in range(deriv + 1))


@dataclass(frozen=True)
class CutoffFamily:
    """The smooth cutoffs used throughout.

    ``phi`` is even, equal to 1 on ``|t| <= 1`` and 0 on ``|t| >= 2``.
    ``chi`` lives on ``1/2 <= |xi| <= 2``; ``chi1`` lives on ``[1/3, 3]`` and is 1
    on the support of ``chi``; ``chi0`` lives on ``[1/4, 4]`` and is 1 on the
    support of ``chi1``.  ``zeta`` is a copy of ``phi`` used in physical space
    and ``psi = 1 - phi`` is the high-pass used by the symbol quantization.
    """

    chi1_band: tuple = (1 / 3, 1 / 2, 2.0, 3.0)
    chi0_band: tuple = (1 / 4, 1 / 3, 3.0, 4.0)

    @staticmethod
    def phi(t, deriv: int = 0):
        t = np.asarray(t, dtype=float)
        a = np.abs(t)
        if deriv == 0:
            return 1 - smooth_step(a - 1)
        sgn = np.sign(t)
        if deriv == 1:
            return -smooth_step(a - 1, 1) * sgn
        return -smooth_step(a - 1, 2)

    def zeta(self, s):
        return self.phi(s)

    def psi(self, eta):
        return 1 - self.phi(eta)

    def chi(self, xi):
        xi = np.asarray(xi, dtype=float)
        return self.phi(xi) - self.phi(2 * xi)

    def chi1(self, xi):
        return plateau(np.abs(xi), *self.chi1_band)

    def chi0(self, xi, deriv: int = 0):
        xi = np.asarray(xi, dtype=float)
        v = plateau(np.abs(xi), *self.chi0_band, deriv=deriv)
        return v * np.sign(xi) ** deriv if deriv else v


CUTOFFS = CutoffFamily()


def _power_derivative(xi, p: float, k: int):
    """``d^k/dxi^k |xi|^p``, set to 0 at ``xi = 0``."""
    xi = np.asarray(xi, dtype=float)
    r = np.abs(xi)
    coef = np.prod([p - i for i in range(k)]) if k else 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r > 0, coef * np.where(r > 0, r, 1.0) ** (p - k), 0.0)
    return out * np.sign(xi) ** k


def dispersion_symbol(xi, deriv: int = 0):
    """``a(xi) = chi0(xi) |xi|^{3/2}`` and its derivatives of any order."""
    xi = np.asarray(xi, dtype=float)
    out = _power_derivative(xi, 1.5, deriv)
    _, inner, outer, _ = CUTOFFS.chi0_band
    r = np.abs(xi)
    edge = (r < inner) | (r > outer)
    if edge.any():
        # chi0 is identically 1 on its plateau, so only the edges need the product rule
        xe = xi[edge]
        out[edge] = sum(
            comb(deriv, i) * CUTOFFS.chi0(xe, i) * _power_derivative(xe, 1.5, deriv - i)
            for i in range(deriv + 1)
        )
    return out


def lp_symbol(k: int) -> MultiplierSpec:
    """Low-pass multiplier ``phi(xi / 2^k)``."""
    scale = 2.0**k
    return MultiplierSpec(lambda xi: CUTOFFS.phi(xi / scale), f"phi_{k}")


def block_symbol(j: int) -> MultiplierSpec:
    """Dyadic multiplier ``phi_j - phi_{j-1}`` (``phi_0`` when ``j = 0``)."""
    if j == 0:
        return lp_symbol(0)
    a, b = 2.0**j, 2.0 ** (j - 1)
    return MultiplierSpec(lambda xi: CUTOFFS.phi(xi / a) - CUTOFFS.phi(xi / b), f"delta_{j}")


def _check_band(grid: Grid1D, j: int):
    if j < 0:
        raise ValueError("dyadic index must be non-negative")
    if 2.0 ** (j + 1) > grid.max_frequency:
        raise ValueError(
            f"band {j} reaches |xi| = {2.0 ** (j + 1):g}, above Nyquist {grid.max_frequency:g}"
        )


def lp_lowpass(f: Field, k: int) -> Field:
    """``S_k f``."""
    _check_band(f.grid, k)
    return apply_multiplier(f, lp_symbol(k))


def lp_block(f: Field, j: int) -> Field:
    """``Delta_j f`` for ``j >= 1``; its spectrum sits in ``2^{j-1} <= |xi| <= 2^{j+1}``."""
    if j < 1:
        raise ValueError("lp_block needs j >= 1; use lp_lowpass(f, 0) for the low block")
    _check_band(f.grid, j)
    return apply_multiplier(f, block_symbol(j))


def lp_decompose(f: Field, top: int | None = None) -> list[Field]:
    """``[S_0 f, Delta_1 f, ..., Delta_top f]``."""
    top = f.grid.max_band() if top is None else top
    _check_band(f.grid, top)
    xi = f.grid.fft_frequencies
    prev = CUTOFFS.phi(xi)
    out = [Field.from_hat(f.grid, f.hat * prev)]
    for j in range(1, top + 1):
        cur = CUTOFFS.phi(xi / 2.0**j)
        out.append(Field.from_hat(f.grid, f.hat * (cur - prev)))
        prev = cur
    return out


# --------------------------------------------------------------------------
# norms


def l2_norm(f: Field) -> float:
    return float(np.sqrt(f.grid.length * np.sum(np.abs(f.hat) ** 2)))


def l2_norm_nodes(f: Field) -> float:
    return float(np.sqrt(f.grid.spacing * np.sum(np.abs(f.values) ** 2)))


def linf_norm(f: Field) -> float:
    return float(np.max(np.abs(f.values)))


def high_frequency_fraction(f: Field, cutoff: float | None = None) -> float:
    """Relative L2 mass of ``f`` above ``cutoff`` (default Nyquist/2)."""
    cutoff = f.grid.max_frequency / 2 if cutoff is None else cutoff
    e = np.abs(f.hat) ** 2
    tot = e.sum()
    if tot == 0:
        return 0.0
    return float(np.sqrt(e[np.abs(f.grid.fft_frequencies) > cutoff].sum() / tot))


def _require_band_limited(f: Field, tol: float):
    frac = high_frequency_fraction(f)
    if frac > tol:
        raise ValueError(
            f"field carries relative mass {frac:.2e} above Nyquist/2; grid maxima would "
            "not approximate the sup norm"
        )


def sobolev_norm(f: Field, s: float) -> float:
    """``(L * sum_k (1 + xi_k^2)^s |c_k|^2)^{1/2}``."""
    w = (1 + f.grid.fft_frequencies**2) ** s
    return float(np.sqrt(f.grid.length * np.sum(w * np.abs(f.hat) ** 2)))


def holder_norm(f: Field, rho: float, check_band: bool = True, tol: float = 1e-6) -> float:
    """Discrete ``W^{rho, infinity}`` norm.

    Sum of grid maxima of ``|d^k f|`` for ``k <= floor(rho)``; for fractional
    ``rho`` the Hölder quotient of the top derivative at the grid spacing is
    added.
    """
    if rho < 0:
        raise ValueError("rho must be non-negative")
    if check_band:
        _require_band_limited(f, tol)
    k = int(np.floor(rho + 1e-12))
    frac = rho - k
    total = 0.0
    g = f
    for i in range(k + 1):
        g = derivative(f, i)
        total += linf_norm(g)
    if frac > 1e-12:
        dx = f.grid.spacing
        diff = np.abs(np.roll(g.values, -1) - g.values)
        total += float(diff.max() / dx**frac)
    return total


def besov_inf2_norm(f: Field, r: float, check_band: bool = True, tol: float = 1e-6) -> float:
    """``(sum_j 2^{2jr} max|Delta_j f|^2)^{1/2}`` with ``Delta_0 = S_0``."""
    if check_band:
        _require_band_limited(f, tol)
    blocks = lp_decompose(f)
    acc = sum(2.0 ** (2 * j * r) * linf_norm(b) ** 2 for j, b in enumerate(blocks))
    return float(np.sqrt(acc))


# --------------------------------------------------------------------------
# estimator facade


class LittlewoodPaleyTransformer(TransformerMixin, BaseEstimator):
    """Split rows of samples into dyadic blocks.

    Parameters
    ----------
    length : float
        Period of the sampled functions.
    top_band : int or None
        Highest block index; ``None`` takes the largest band under Nyquist.

    ``transform`` maps ``(n_samples, n_points)`` to
    ``(n_samples, top_band + 1, n_points)``; ``inverse_transform`` sums blocks.
    """

    def __init__(self, length=2 * np.pi, top_band=None):
        self.length = length
        self.top_band = top_band

    @staticmethod
    def _check_rows(X):
        X = np.asarray(X)
        if X.ndim != 2:
            raise ValueError("expected a 2-D array of sampled rows")
        return check_finite(X.astype(complex), "X")

    def fit(self, X, y=None):
        X = self._check_rows(X)
        self.grid_ = Grid1D(X.shape[1], self.length)
        self.top_band_ = self.grid_.max_band() if self.top_band is None else int(self.top_band)
        _check_band(self.grid_, self.top_band_)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "grid_")
        X = self._check_rows(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError("number of nodes differs from fit")
        out = np.empty((X.shape[0], self.top_band_ + 1, X.shape[1]), dtype=complex)
        for i, row in enumerate(X):
            blocks = lp_decompose(Field(self.grid_, row), self.top_band_)
            out[i] = np.stack([b.values for b in blocks])
        return out

    def inverse_transform(self, B):
        return np.asarray(B).sum(axis=1)
