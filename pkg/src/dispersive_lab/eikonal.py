"""Phase construction for the dyadic-block model.

Time is the semiclassical variable ``sigma = t h^{-1/2}``.  The coefficient
enters through ``V_h(sigma, x) = W_h^delta(sigma h^{1/2}, x)``, where
``W_h^delta = S_m W`` with ``m = [delta (j - 3)]`` and ``h = 2^{-j}``.

Two phases are built on ``Phi = x xi - sigma a(xi) + h^{1/2} psi``:

* the linear one, ``d_sigma psi + a'(xi) d_x psi = -xi V_h``, solved exactly
  mode by mode along straight characteristics;
* the quasilinear one,
  ``d_sigma psi + [a(xi + h^{1/2} psi_x) - a(xi)] / h^{1/2} + h^{1/2} V_h psi_x = -V_h xi``,
  solved by characteristics for ``psi_1 = d_x psi``.

Arrays are laid out as ``(sigma, x, xi)``.  The xi samples are Chebyshev
points on ``[1/3, 3]`` and on the mirrored negative band, and xi-derivatives
use spectral differentiation on each band.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._validation import InvariantViolation, RegimeError, check_positive
from .spectral import CUTOFFS, Field, Grid1D, antiderivative, derivative, dispersion_symbol

XI_BAND = (1.0 / 3.0, 3.0)


# --------------------------------------------------------------------------
# coefficient fields


def _periodic_bump(length, center, width):
    k0 = 2 * np.pi / length
    scale = (k0 * width) ** 2

    def prof(x):
        return np.exp((np.cos(k0 * (np.asarray(x, float) - center)) - 1.0) / scale)

    return prof


@dataclass(frozen=True)
class CoefficientField:
    """A real periodic coefficient ``W(t, x) = W0(x - speed t)``.

    Every family used here is a profile carried at constant speed, which makes
    the block smoothing and the time derivative exact.
    """

    family: str
    length: float
    params: tuple = ()
    speed: float = 0.0
    profile: Callable = field(default=None, repr=False, compare=False)

    # ---- families
    @classmethod
    def zero(cls, length):
        return cls("zero", length, (), 0.0, lambda x: np.zeros(np.shape(x)))

    @classmethod
    def constant(cls, length, w):
        w = float(w)
        return cls("constant", length, (("w", w),), 0.0, lambda x: np.full(np.shape(x), w))

    @classmethod
    def bump(cls, length, center=0.0, width=1.5, amp=0.5):
        check_positive(width, "width")
        prof = _periodic_bump(length, center, width)
        return cls(
            "bump",
            length,
            (("center", center), ("width", width), ("amp", amp)),
            0.0,
            lambda x: amp * prof(x),
        )

    @classmethod
    def traveling(cls, length, speed=1.0, center=0.0, width=1.5, amp=0.5):
        b = cls.bump(length, center, width, amp)
        return cls("traveling", length, (("speed", speed),) + b.params, float(speed), b.profile)

    @classmethod
    def synthetic_sobolev(cls, length, s, seed, n_max=6, amp=1.0):
        """One cosine per dyadic band ``n = 0..n_max`` at frequency ``2^n``, amplitude ``2^{-n(s - 3/2)}``.

        The ``n = 0`` mode is the part that survives the coarsest smoothing ``S_0``.
        """
        base = 2 * np.pi / length
        ratio = 2.0**n_max / base
        if abs(ratio - round(ratio)) > 1e-9 or abs(2.0 / base - round(2.0 / base)) > 1e-9:
            raise ValueError("frequencies 2^n must be multiples of 2 pi / length")
        rng = np.random.default_rng(seed)
        phases = rng.uniform(0, 2 * np.pi, n_max + 1)
        amps = amp * 2.0 ** (-np.arange(n_max + 1) * (s - 1.5))

        def prof(x):
            x = np.asarray(x, float)
            out = np.zeros(np.shape(x))
            for n in range(n_max + 1):
                out = out + amps[n] * np.cos(2.0**n * x + phases[n])
            return out

        return cls(
            "synthetic-sobolev",
            length,
            (("s", s), ("seed", seed), ("n_max", n_max), ("amp", amp)),
            0.0,
            prof,
        )

    def w(self, t, x):
        return self.profile(np.asarray(x, float) - self.speed * t)

    def describe(self) -> str:
        inner = ",".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}" for k, v in self.params)
        return f"{self.family}({inner})"

    def smoothed(self, h: float, delta: float, n_ref: int = 2048) -> "SmoothedCoefficient":
        """``W_h^delta = S_m W`` with ``m = max(0, [delta (j - 3)])``."""
        j = block_index(h)
        m = max(0, int(np.floor(delta * (j - 3))))
        ref = Grid1D(n_ref, self.length)
        vals = self.profile(ref.nodes)
        f = Field(ref, vals)
        hat = f.hat * CUTOFFS.phi(ref.fft_frequencies / 2.0**m)
        if 2.0 ** (m + 1) >= ref.max_frequency:
            raise RegimeError("reference grid too coarse for the smoothing band")
        kmax = int(np.ceil(2.0 ** (m + 1) / (2 * np.pi / self.length)))
        d = np.zeros(kmax + 1, dtype=complex)
        d[0] = hat[0].real
        d[1:] = 2 * hat[1 : kmax + 1]
        return SmoothedCoefficient(self.length, float(h), float(delta), m, d, self.speed)

    def sup_norms(self, n_ref: int = 2048) -> dict:
        ref = Grid1D(n_ref, self.length)
        f = Field(ref, self.profile(ref.nodes))
        w0 = float(np.max(np.abs(f.values.real)))
        w1 = float(np.max(np.abs(derivative(f).values.real)))
        w2 = float(np.max(np.abs(derivative(f, 2).values.real)))
        return {"W": w0, "W_x": w1, "W_xx": w2, "W_t": abs(self.speed) * w1}


def block_index(h: float) -> int:
    """``j`` with ``h = 2^{-j}``; ``h`` must be a power of two in ``(0, 1]``."""
    j = -np.log2(h)
    if not (h > 0 and h <= 1 and abs(j - round(j)) < 1e-12):
        raise RegimeError(f"h must be 2^-j for an integer j >= 0, got {h}")
    return int(round(j))


@dataclass(frozen=True)
class SmoothedCoefficient:
    """Band-limited ``W_h^delta`` stored by its non-negative Fourier modes.

    ``W(t, x) = Re sum_k d_k exp(i k w0 (x - speed t))`` with ``w0 = 2 pi / L``.
    """

    length: float
    h: float
    delta: float
    band: int
    modes: np.ndarray
    speed: float

    @property
    def base(self) -> float:
        return 2 * np.pi / self.length

    @property
    def max_xi(self) -> float:
        return (self.modes.size - 1) * self.base

    def value(self, t, x, deriv: int = 0) -> np.ndarray:
        """``d_x^deriv W_h^delta(t, x)`` at arbitrary points (Horner in ``exp(i w0 x)``)."""
        x = np.asarray(x, float)
        k = np.arange(self.modes.size)
        d = self.modes * (1j * k * self.base) ** deriv
        z = np.exp(1j * self.base * (x - self.speed * t))
        p = np.full(x.shape, d[-1], dtype=complex)
        for c in d[-2::-1]:
            p = p * z + c
        return p.real

    def V(self, sigma, x, deriv: int = 0) -> np.ndarray:
        return self.value(np.asarray(sigma) * np.sqrt(self.h), x, deriv)

    def dt_value(self, t, x, deriv: int = 0) -> np.ndarray:
        return -self.speed * self.value(t, x, deriv + 1)

    def hat_on(self, grid: Grid1D, t: float = 0.0, deriv: int = 0) -> np.ndarray:
        """FFT-order coefficients of ``d_x^deriv W_h^delta(t)`` on ``grid``."""
        if abs(grid.length - self.length) > 1e-12 * self.length:
            raise ValueError("grid length differs from the coefficient period")
        K = self.modes.size - 1
        if K >= grid.n_points // 2:
            raise ValueError("grid does not resolve the smoothed coefficient")
        k = np.arange(K + 1)
        c = self.modes * np.exp(-1j * k * self.base * self.speed * t) / 2
        c[0] = self.modes[0].real
        hat = np.zeros(grid.n_points, dtype=complex)
        hat[: K + 1] = c
        if K:
            hat[-K:] = np.conj(c[1:][::-1])
        return hat * (1j * grid.fft_frequencies) ** deriv

    def field(self, grid: Grid1D, t: float = 0.0, deriv: int = 0) -> Field:
        f = Field.from_hat(grid, self.hat_on(grid, t, deriv))
        return Field(grid, f.values.real)

    def sup(self, deriv: int = 0, n: int = 1024) -> float:
        x = np.linspace(0, self.length, n, endpoint=False)
        return float(np.max(np.abs(self.value(0.0, x, deriv))))


# --------------------------------------------------------------------------
# regimes and xi samples


def semiclassical_regime(delta: float, epsilon: float | None = None) -> tuple[float, float]:
    """``(mu0, epsilon)`` with ``mu0 = (1/2 - delta) / 2`` and ``0 < epsilon < mu0 / 5``."""
    if not 0 <= delta < 0.5:
        raise RegimeError(f"delta must lie in [0, 1/2), got {delta}")
    mu0 = 0.5 * (0.5 - delta)
    eps = mu0 / 10 if epsilon is None else float(epsilon)
    if not 0 < eps < mu0 / 5:
        raise RegimeError(f"epsilon = {eps} violates 0 < epsilon < mu0/5 = {mu0 / 5}")
    return mu0, eps


def classical_mu0(delta: float) -> float:
    """``mu0 = 1/2 - 2 delta`` of the long-time construction (needs ``delta < 1/4``)."""
    if not 0 <= delta < 0.25:
        raise RegimeError(f"the classical-time construction needs 0 <= delta < 1/4, got {delta}")
    return 0.5 - 2 * delta


def chebyshev_band(n: int = 33, lo: float = XI_BAND[0], hi: float = XI_BAND[1]) -> np.ndarray:
    """Chebyshev-Lobatto points on ``[lo, hi]`` in increasing order."""
    t = -np.cos(np.pi * np.arange(n) / (n - 1))
    return lo + (hi - lo) * (t + 1) / 2


def xi_samples(n: int = 33) -> np.ndarray:
    band = chebyshev_band(n)
    return np.concatenate([-band[::-1], band])


def _bary_weights(n):
    w = (-1.0) ** np.arange(n)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def barycentric_matrix(nodes: np.ndarray, targets) -> np.ndarray:
    """Rows interpolate from Chebyshev-Lobatto ``nodes`` to ``targets``."""
    targets = np.atleast_1d(np.asarray(targets, float))
    w = _bary_weights(nodes.size)
    diff = targets[:, None] - nodes[None, :]
    exact = diff == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        q = w[None, :] / diff
        M = q / q.sum(axis=1, keepdims=True)
    hit = exact.any(axis=1)
    M[hit] = exact[hit].astype(float)
    return M


def chebyshev_diff_matrix(nodes: np.ndarray) -> np.ndarray:
    """Differentiation matrix on Chebyshev-Lobatto ``nodes`` (any affine image)."""
    n = nodes.size
    w = _bary_weights(n)
    X = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(X, 1.0)
    D = (w[None, :] / w[:, None]) / X
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def _split_bands(xi):
    neg = np.flatnonzero(xi < 0)
    pos = np.flatnonzero(xi > 0)
    if neg.size + pos.size != xi.size:
        raise ValueError("xi samples must avoid 0")
    return [b for b in (neg, pos) if b.size]


def xi_derivatives(values: np.ndarray, xi: np.ndarray, order: int = 1) -> np.ndarray:
    """Spectral xi-derivative along the last axis, band by band."""
    out = np.empty_like(values)
    for idx in _split_bands(xi):
        D = np.linalg.matrix_power(chebyshev_diff_matrix(xi[idx]), order)
        # D annihilates constants; subtracting one sample makes that exact in floating point
        v = values[..., idx]
        out[..., idx] = (v - v[..., :1]) @ D.T
    return out


def xi_interpolate(values: np.ndarray, xi: np.ndarray, targets) -> np.ndarray:
    """Barycentric interpolation along the last axis; targets outside both bands give 0."""
    targets = np.atleast_1d(np.asarray(targets, float))
    out = np.zeros(values.shape[:-1] + targets.shape, dtype=np.result_type(values, float))
    for idx in _split_bands(xi):
        nodes = xi[idx]
        sel = (targets >= nodes.min()) & (targets <= nodes.max())
        if sel.any():
            out[..., sel] = values[..., idx] @ barycentric_matrix(nodes, targets[sel]).T
    return out


def _check_convexity(xi):
    a2 = dispersion_symbol(xi, 2)
    if np.any(a2 <= 0):
        raise RegimeError("a''(xi) must be positive on every xi sample")
    return float(a2.min())


# --------------------------------------------------------------------------
# solutions


@dataclass(frozen=True)
class EikonalSolution:
    """Phase correction ``psi`` and its derivatives on ``sigma x grid x xi``."""

    kind: str
    h: float
    delta: float
    epsilon: float
    mu0: float
    xi: np.ndarray
    sigma: np.ndarray
    grid: Grid1D
    psi: np.ndarray
    dx_psi: np.ndarray
    dxx_psi: np.ndarray
    dxi_psi: np.ndarray
    dxixi_psi: np.ndarray
    coefficient: SmoothedCoefficient
    residual: float
    tau0: float | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def sigma_max(self) -> float:
        return float(self.sigma[-1])

    def x_derivative(self, order: int) -> np.ndarray:
        """``d_x^order psi`` by spectral differentiation on the grid."""
        th = (1j * self.grid.fft_frequencies) ** order
        if order % 2:
            th[self.grid.n_points // 2] = 0
        return np.fft.ifft(np.fft.fft(self.psi, axis=1) * th[None, :, None], axis=1).real

    def sigma_index(self, sigma: float) -> int:
        i = int(np.argmin(np.abs(self.sigma - sigma)))
        if abs(self.sigma[i] - sigma) > 1e-12 * max(1.0, sigma):
            raise ValueError(f"sigma = {sigma} is not a node of the solution")
        return i


def _sigma_grid(sigma_max, n_sigma, sigma):
    if sigma is not None:
        s = np.unique(np.concatenate([[0.0], np.asarray(sigma, float)]))
        if s[0] < 0:
            raise ValueError("sigma values must be non-negative")
        return s
    return np.linspace(0.0, sigma_max, n_sigma)


def _sinc_integral(omega, sigma):
    """``int_0^sigma exp(i omega s) ds``, stable as ``omega -> 0``."""
    return sigma * np.exp(0.5j * omega * sigma) * np.sinc(omega * sigma / (2 * np.pi))


def _linear_hat(coef: SmoothedCoefficient, sigma, xi, grid):
    """FFT-order coefficients of the linear phase, shape ``(n_sigma, n_x, n_xi)``."""
    h = coef.h
    K = coef.modes.size - 1
    k = np.arange(K + 1)
    xk = k * coef.base
    c = coef.modes / 2
    c[0] = coef.modes[0].real
    a1 = dispersion_symbol(xi, 1)
    om = xk[:, None] * (a1[None, :] - coef.speed * np.sqrt(h))  # (K+1, n_xi)
    s = sigma[:, None, None]
    amp = (
        -xi[None, None, :]
        * c[None, :, None]
        * np.exp(-1j * xk[None, :, None] * s * a1[None, None, :])
        * _sinc_integral(om[None], s)
    )
    hat = np.zeros((sigma.size, grid.n_points, xi.size), dtype=complex)
    hat[:, : K + 1] = amp
    if K:
        hat[:, grid.n_points - K :] = np.conj(amp[:, 1:][:, ::-1])
    return hat


def _from_hat(hat, grid, order=0):
    th = (1j * grid.fft_frequencies) ** order
    if order % 2:
        th[grid.n_points // 2] = 0
    return np.fft.ifft(hat * th[None, :, None], axis=1).real * grid.n_points


def solve_linear_eikonal(
    coeff: CoefficientField,
    h: float,
    delta: float,
    xi_samples: np.ndarray,
    sigma_max: float,
    *,
    n_sigma: int = 17,
    sigma=None,
    grid: Grid1D | None = None,
    epsilon: float | None = None,
    residual_tol: float = 1e-8,
) -> EikonalSolution:
    """Solve ``d_sigma psi + a'(xi) d_x psi = -xi V_h``, ``psi(0) = 0``.

    ``psi(sigma, x) = -xi int_0^sigma V_h(s, x + (s - sigma) a'(xi)) ds``; the
    integral is done exactly on each Fourier mode of ``V_h``.
    """
    mu0, eps = semiclassical_regime(delta, epsilon)
    cap = h ** (-eps)
    if sigma_max > cap * (1 + 1e-12):
        raise RegimeError(f"sigma_max = {sigma_max} exceeds h^-epsilon = {cap:.6g}")
    xi = np.asarray(xi_samples, float)
    _check_convexity(xi)
    grid = Grid1D(256, coeff.length) if grid is None else grid
    coef = coeff.smoothed(h, delta)
    s = _sigma_grid(sigma_max, n_sigma, sigma)
    if s[-1] > cap * (1 + 1e-12):
        raise RegimeError(f"sigma = {s[-1]} exceeds h^-epsilon = {cap:.6g}")
    hat = _linear_hat(coef, s, xi, grid)
    psi = _from_hat(hat, grid)
    dx = _from_hat(hat, grid, 1)
    dxx = _from_hat(hat, grid, 2)

    # residual by a 4th-order centred difference in sigma
    e = 1e-3
    inner = s[(s > 2 * e)]
    res = 0.0
    if inner.size:
        P = [_from_hat(_linear_hat(coef, inner + m * e, xi, grid), grid) for m in (-2, -1, 1, 2)]
        dsig = (P[0] - 8 * P[1] + 8 * P[2] - P[3]) / (12 * e)
        idx = np.searchsorted(s, inner)
        V = coef.V(inner[:, None], grid.nodes[None, :])
        a1 = dispersion_symbol(xi, 1)
        R = dsig + a1[None, None, :] * dx[idx] + xi[None, None, :] * V[:, :, None]
        res = float(np.max(np.abs(R)))
        if res > residual_tol:
            raise InvariantViolation(f"linear eikonal residual {res:.2e} above {residual_tol:.0e}")
    return EikonalSolution(
        "linear",
        float(h),
        float(delta),
        eps,
        mu0,
        xi,
        s,
        grid,
        psi,
        dx,
        dxx,
        xi_derivatives(psi, xi, 1),
        xi_derivatives(psi, xi, 2),
        coef,
        res,
    )


# --------------------------------------------------------------------------
# characteristics of the quasilinear eikonal


@dataclass(frozen=True)
class CharacteristicFlow:
    """``(X, Z)`` along characteristics seeded at the grid nodes, with the inverse map.

    Arrays have shape ``(n_s, n_x, n_xi)``.  ``psi`` carries the phase itself
    along each characteristic; ``extras`` holds any companion quantities.
    """

    xi: np.ndarray
    s: np.ndarray
    grid: Grid1D
    X: np.ndarray
    Z: np.ndarray
    dXdx: np.ndarray
    dZdx: np.ndarray
    psi: np.ndarray
    inverse_Y: np.ndarray
    c1: float
    c2: float
    z_bound: float
    extras: dict = field(default_factory=dict)

    def pull_back(self, values: np.ndarray) -> np.ndarray:
        """Eulerian values ``q(s, y) = Q(s, Y(s, y))`` of a Lagrangian array ``Q(s, seed)``."""
        return np.stack([_trig_eval(values[i], self.grid, self.inverse_Y[i]) for i in range(self.s.size)])


def _trig_eval(vals: np.ndarray, grid: Grid1D, pts: np.ndarray, deriv: int = 0) -> np.ndarray:
    """Evaluate real periodic samples ``vals (n_x, n_xi)`` at ``pts (n_pts, n_xi)``."""
    n = grid.n_points
    hat = np.fft.fft(vals, axis=0) / n
    K = n // 2 - 1
    k = np.arange(K + 1)
    w0 = 2 * np.pi / grid.length
    d = hat[: K + 1] * 2
    d[0] = hat[0]
    d = d * ((1j * k * w0) ** deriv)[:, None]
    z = np.exp(1j * w0 * pts)
    p = np.broadcast_to(d[-1], pts.shape).astype(complex)
    for c in d[-2::-1]:
        p = p * z + c
    return p.real


def _invert_periodic(X: np.ndarray, grid: Grid1D, tol: float = 1e-11, iters: int = 12) -> np.ndarray:
    """Solve ``X(Y) = y`` at the grid nodes for an increasing map ``X(x) = x + D(x)``."""
    y = grid.nodes[:, None]
    D = X - grid.nodes[:, None]
    Y = np.broadcast_to(y, X.shape) - D
    for _ in range(iters):
        F = Y + _trig_eval(D, grid, Y) - y
        Y = Y - F / (1 + _trig_eval(D, grid, Y, 1))
        if np.max(np.abs(F)) < tol * 1e-2:
            break
    err = np.max(np.abs(Y + _trig_eval(D, grid, Y) - y))
    if err > tol:
        raise InvariantViolation(f"flow inversion residual {err:.2e} above {tol:.0e}")
    return Y


def _flow_bounds(coeff: SmoothedCoefficient, xi: np.ndarray):
    a1 = np.abs(dispersion_symbol(xi, 1))
    c1 = 0.5 * float(a1.min())
    c2 = 2.0 * float(a1.max())
    w = coeff.sup(0) + coeff.sup(1) + abs(coeff.speed) * coeff.sup(1)
    zb = 4.0 * float(np.max(np.abs(xi))) * w / c1
    return c1, c2, zb


def _rk_schedule(s_out, ds):
    """Uniform RK4 sub-steps hitting every requested output exactly."""
    steps = []
    for a, b in zip(s_out[:-1], s_out[1:]):
        n = max(1, int(np.ceil((b - a) / ds - 1e-9)))
        steps.append((a, (b - a) / n, n))
    return steps


def solve_characteristics(
    coeff: CoefficientField | SmoothedCoefficient,
    h: float,
    delta: float,
    xi,
    s_max: float,
    *,
    grid: Grid1D | None = None,
    s_out=None,
    extra_rhs: Callable | None = None,
    extra_init: np.ndarray | None = None,
    invert: bool = True,
    x_seeds: np.ndarray | None = None,
    z_init: np.ndarray | None = None,
    frozen_sigma: float | None = None,
    ds: float | None = None,
) -> CharacteristicFlow:
    """RK4 for ``X' = A``, ``Z' = B`` with ``A = a'(xi + h^{1/2} Z) + h^{1/2} W``, ``B = -h^{1/2} W_x Z - xi W_x``.

    The variational pair ``(X_x, Z_x)`` and the phase itself are carried along.
    After every step the flow invariants are checked and a violation raises
    :class:`InvariantViolation` naming the step and the invariant.

    ``extra_rhs(s, state, extra) -> d extra / ds`` integrates companion
    quantities on the same schedule (used by the exponential amplitude).

    ``x_seeds``/``z_init`` start the flow from arbitrary states (the inverse
    map is then skipped), and ``frozen_sigma`` freezes the coefficient at one
    time so that the system is autonomous.
    """
    coef = coeff if isinstance(coeff, SmoothedCoefficient) else coeff.smoothed(h, delta)
    xi = np.atleast_1d(np.asarray(xi, float))
    _check_convexity(xi)
    grid = Grid1D(256, coef.length) if grid is None else grid
    sq = np.sqrt(h)
    ds = min(0.01, sq / 4) if ds is None else ds
    s_out = np.array([0.0, s_max]) if s_out is None else np.unique(np.concatenate([[0.0], s_out]))
    c1, c2, zb = _flow_bounds(coef, xi)
    a_xi = dispersion_symbol(xi, 0)
    if x_seeds is None:
        x0 = np.broadcast_to(grid.nodes[:, None], (grid.n_points, xi.size))
    else:
        x0 = np.asarray(x_seeds, float)
        x0 = np.broadcast_to(x0 if x0.ndim == 2 else x0[:, None], (x0.shape[0], xi.size))
        invert = False
    z0 = np.zeros_like(x0) if z_init is None else np.broadcast_to(np.asarray(z_init, float), x0.shape)

    def rhs(s, st, ex):
        X, Z, Xx, Zx, _ = st
        if frozen_sigma is not None:
            s = frozen_sigma
        W = coef.V(s, X)
        Wx = coef.V(s, X, 1)
        Wxx = coef.V(s, X, 2)
        rho = xi + sq * Z
        a0 = dispersion_symbol(rho, 0)
        a1 = dispersion_symbol(rho, 1)
        a2 = dispersion_symbol(rho, 2)
        dX = a1 + sq * W
        dZ = -sq * Wx * Z - xi * Wx
        dXx = sq * Wx * Xx + sq * a2 * Zx
        dZx = -(sq * Z + xi) * Wxx * Xx - sq * Wx * Zx
        dP = -(a0 - a_xi) / sq + a1 * Z - xi * W
        d = np.stack([dX, dZ, dXx, dZx, dP])
        dex = None if extra_rhs is None else extra_rhs(s, st, ex)
        return d, dex

    st = np.stack([x0, z0, np.ones_like(x0), np.zeros_like(x0), np.zeros_like(x0)])
    ex = None if extra_rhs is None else np.array(extra_init, dtype=complex)
    rec = [st.copy()]
    rec_ex = [None if ex is None else ex.copy()]
    step = 0
    for a, hstep, n in _rk_schedule(s_out, ds):
        for i in range(n):
            s = a + i * hstep
            k1, e1 = rhs(s, st, ex)
            k2, e2 = rhs(s + hstep / 2, st + hstep / 2 * k1, None if ex is None else ex + hstep / 2 * e1)
            k3, e3 = rhs(s + hstep / 2, st + hstep / 2 * k2, None if ex is None else ex + hstep / 2 * e2)
            k4, e4 = rhs(s + hstep, st + hstep * k3, None if ex is None else ex + hstep * e3)
            st = st + hstep / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if ex is not None:
                ex = ex + hstep / 6 * (e1 + 2 * e2 + 2 * e3 + e4)
            step += 1
            _check_flow(st, coef, xi, sq, s + hstep if frozen_sigma is None else frozen_sigma, step, c1, c2, zb)
        rec.append(st.copy())
        rec_ex.append(None if ex is None else ex.copy())
    R = np.stack(rec)
    Y = np.stack([_invert_periodic(R[i, 0], grid) for i in range(len(rec))]) if invert else np.empty(0)
    extras = {} if ex is None else {"lagrangian": np.stack(rec_ex)}
    return CharacteristicFlow(xi, s_out, grid, R[:, 0], R[:, 1], R[:, 2], R[:, 3], R[:, 4], Y, c1, c2, zb, extras)


def _check_flow(st, coef, xi, sq, s, step, c1, c2, zb):
    X, Z, Xx = st[0], st[1], st[2]
    Xdot = np.abs(dispersion_symbol(xi + sq * Z, 1) + sq * coef.V(s, X))
    if not np.all(np.isfinite(st)):
        raise InvariantViolation(f"step {step} (s = {s:.4g}): non-finite flow")
    if Xdot.min() < c1 or Xdot.max() > c2:
        raise InvariantViolation(
            f"step {step} (s = {s:.4g}): |dX/ds| in [{Xdot.min():.3g}, {Xdot.max():.3g}] leaves [{c1:.3g}, {c2:.3g}]"
        )
    dev = float(np.max(np.abs(Xx - 1)))
    if dev > 0.5:
        raise InvariantViolation(f"step {step} (s = {s:.4g}): |dX/dx - 1| = {dev:.3g} > 1/2")
    zmax = float(np.max(np.abs(Z)))
    if zmax > zb + 1e-14:
        raise InvariantViolation(f"step {step} (s = {s:.4g}): |Z| = {zmax:.3g} above bound {zb:.3g}")


def select_tau0(
    coeff: CoefficientField,
    h: float,
    delta: float,
    xi,
    *,
    grid: Grid1D | None = None,
    tau_start: float = 0.5,
    tau_min: float = 2.0**-8,
) -> float:
    """Largest ``tau0 = tau_start / 2^k`` for which the flow invariants hold up to ``tau0 h^{-1/2}``."""
    coef = coeff.smoothed(h, delta)
    grid = Grid1D(64, coef.length) if grid is None else grid
    tau = tau_start
    while tau >= tau_min:
        try:
            solve_characteristics(coef, h, delta, xi, tau / np.sqrt(h), grid=grid, invert=False)
            return tau
        except InvariantViolation:
            tau /= 2
    raise InvariantViolation(f"no tau0 >= {tau_min} keeps the flow invariants")


def _ql_residual(coef, h, xi, flow, psi_of, checkpoints, e):
    """Max residual of the quasilinear eikonal at checkpoints, by 4th-order differences in sigma."""
    sq = np.sqrt(h)
    grid = flow.grid
    worst = 0.0
    for sc in checkpoints:
        idx = [int(np.argmin(np.abs(flow.s - (sc + m * e)))) for m in (-2, -1, 0, 1, 2)]
        P = [psi_of(i) for i in idx]
        dsig = (-P[4] + 8 * P[3] - 8 * P[1] + P[0]) / (12 * e)
        i0 = idx[2]
        p1 = _trig_eval(flow.Z[i0], grid, flow.inverse_Y[i0])
        V = coef.V(sc, grid.nodes)[:, None]
        rho = xi + sq * p1
        R = dsig + (dispersion_symbol(rho) - dispersion_symbol(xi)) / sq + sq * V * p1 + V * xi
        worst = max(worst, float(np.max(np.abs(R))))
    return worst


def solve_quasilinear_eikonal(
    coeff: CoefficientField,
    h: float,
    delta: float,
    xi_samples: np.ndarray,
    s_max: float,
    *,
    n_sigma: int = 17,
    sigma=None,
    grid: Grid1D | None = None,
    tau0: float | None = None,
    residual_tol: float = 1e-6,
) -> EikonalSolution:
    """Quasilinear eikonal via ``psi_1(s, y) = Z(s, Y(s, y))``.

    ``psi`` is the x-antiderivative of ``psi_1`` plus an x-independent
    constant, taken as the spatial mean of the phase carried along the
    characteristics (this is the mean of the equation integrated in sigma).
    """
    mu0 = classical_mu0(delta)
    xi = np.asarray(xi_samples, float)
    grid = Grid1D(256, coeff.length) if grid is None else grid
    if tau0 is None:
        tau0 = select_tau0(coeff, h, delta, xi)
    if s_max > tau0 / np.sqrt(h) * (1 + 1e-12):
        raise RegimeError(f"s_max = {s_max} exceeds tau0 h^-1/2 = {tau0 / np.sqrt(h):.6g}")
    coef = coeff.smoothed(h, delta)
    s = _sigma_grid(s_max, n_sigma, sigma)
    e = min(1e-3, s_max / 8) if s_max > 0 else 0.0
    checks = [c for c in (s[-1] / 2, s[-1] - 2 * e) if c > 2 * e] if e else []
    stencil = np.array([c + m * e for c in checks for m in (-2, -1, 0, 1, 2)])
    s_all = np.unique(np.concatenate([s, stencil])) if stencil.size else s
    flow = solve_characteristics(coef, h, delta, xi, s_max, grid=grid, s_out=s_all)

    def psi_of(i):
        return _trig_eval(flow.psi[i], grid, flow.inverse_Y[i])

    res = _ql_residual(coef, h, xi, flow, psi_of, checks, e) if checks else 0.0
    if res > residual_tol:
        raise InvariantViolation(f"quasilinear eikonal residual {res:.2e} above {residual_tol:.0e}")
    keep = np.searchsorted(flow.s, s)
    psi1 = np.stack([_trig_eval(flow.Z[i], grid, flow.inverse_Y[i]) for i in keep])
    carried = np.stack([psi_of(i) for i in keep])
    psi = np.empty_like(psi1)
    mean_gap = 0.0
    for i in range(s.size):
        for q in range(xi.size):
            P, m = antiderivative(Field(grid, psi1[i, :, q]))
            mean_gap = max(mean_gap, abs(m))
            p = P.values.real
            psi[i, :, q] = p - p.mean() + carried[i, :, q].mean()
    recon = float(np.max(np.abs(psi - carried)))
    th = 1j * grid.fft_frequencies
    th[grid.n_points // 2] = 0
    dxx = np.fft.ifft(np.fft.fft(psi1, axis=1) * th[None, :, None], axis=1).real
    diag = {"mean_of_psi1": mean_gap, "antiderivative_vs_carried": recon, "c1": flow.c1, "c2": flow.c2,
            "z_bound": flow.z_bound, "z_max": float(np.max(np.abs(flow.Z))),
            "dXdx_dev": float(np.max(np.abs(flow.dXdx - 1))), "sup_dxx_psi": float(np.max(np.abs(dxx)))}
    return EikonalSolution(
        "quasilinear",
        float(h),
        float(delta),
        0.0,
        mu0,
        xi,
        s,
        grid,
        psi,
        psi1,
        dxx,
        xi_derivatives(psi, xi, 1),
        xi_derivatives(psi, xi, 2),
        coef,
        res,
        tau0,
        diag,
    )


def xi_derivative_bounds(sol: EikonalSolution) -> dict:
    """Measured sup-ratios of xi-derivatives against their growth envelopes, for ``k = 0, 1``.

    Linear kind: ``|d_xi^k d_x^alpha psi| <= C |sigma| h^{-k eps} h^{-delta (alpha + k - 1)^+}``.
    Quasilinear kind, with ``Lambda = h^delta d_x``: ``|Lambda^k d_xi psi| + |Lambda^k d_x d_xi psi| <= C sigma``
    and ``|Lambda^k d_xi^2 psi| <= C tau0 h^{-1/2} sigma``.
    """
    pos = sol.sigma > 0
    s = sol.sigma[pos][:, None, None]
    h, d = sol.h, sol.delta
    out = {}
    if sol.kind == "linear":
        for k_xi, arr in ((1, sol.dxi_psi), (2, sol.dxixi_psi)):
            for alpha in (0, 1):
                q = arr[pos] if alpha == 0 else _dx(arr[pos], sol.grid)
                env = s * h ** (-k_xi * sol.epsilon) * h ** (-d * max(alpha + k_xi - 1, 0))
                out[f"xi{k_xi}_x{alpha}"] = float(np.max(np.abs(q) / env))
        return out
    lam = h**d
    for k in (0, 1):
        a = sol.dxi_psi[pos]
        b = _dx(a, sol.grid)
        c = sol.dxixi_psi[pos]
        for _ in range(k):
            a, b, c = lam * _dx(a, sol.grid), lam * _dx(b, sol.grid), lam * _dx(c, sol.grid)
        out[f"first_k{k}"] = float(np.max((np.abs(a) + np.abs(b)) / s))
        out[f"second_k{k}"] = float(np.max(np.abs(c) / (s * sol.tau0 / np.sqrt(h))))
    return out


def _dx(arr, grid):
    th = 1j * grid.fft_frequencies
    th[grid.n_points // 2] = 0
    return np.fft.ifft(np.fft.fft(arr, axis=1) * th[None, :, None], axis=1).real
