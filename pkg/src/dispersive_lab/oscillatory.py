"""Oscillatory integrals of the block parametrix.

The kernel of the parametrix is

    K(sigma, x, z) = (1 / 2 pi h) int exp((i/h)(Phi - z xi)) b(sigma, x, xi) zeta(x - z - sigma a'(xi)) dxi,

``Phi = x xi - sigma a(xi) + h^{1/2} psi``.  ``evaluate_kernel`` computes it by
vectorized adaptive Gauss-Kronrod quadrature and bounds it by the stationary
phase lemma applied piecewise; ``assemble_parametrix`` applies the kernel to
block data through the Fourier lattice of the torus.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial
from typing import Callable

import numpy as np
from scipy.integrate import quad_vec
from scipy.optimize import brentq

from ._validation import RegimeError
from .amplitude import AmplitudeSolution, solve_transport_exponential, solve_transport_polynomial
from .eikonal import (
    CoefficientField,
    EikonalSolution,
    _trig_eval,
    solve_linear_eikonal,
    solve_quasilinear_eikonal,
    xi_derivatives,
    xi_interpolate,
    xi_samples,
)
from .spectral import CUTOFFS, Field, Grid1D, dispersion_symbol, plateau, smooth_step

#: points per oscillation for the quadrature panels
POINTS_PER_OSCILLATION = 5
#: samples per band used for convexity checks, sup norms and total variations
CHECK_SAMPLES = 4001


# --------------------------------------------------------------------------
# quadrature


def oscillatory_quad(f: Callable, lo: float, hi: float, width: float, epsabs: float, limit: int = 400):
    """``int_lo^hi f`` for a vectorized complex ``f``, panels of at most ``width``.

    All panels are integrated together: ``quad_vec`` adapts on the shared
    reference variable while ``f`` is evaluated on every panel at once.
    Returns ``(value, error)`` where the error bounds the sum of panel errors.
    """
    if hi <= lo:
        return 0j, 0.0
    n = max(1, int(np.ceil((hi - lo) / width)))
    edges = np.linspace(lo, hi, n + 1)
    left, w = edges[:-1], np.diff(edges)
    tol = epsabs / np.sqrt(n)

    def g(t):
        return f(left + t * w) * w

    res, err = quad_vec(g, 0.0, 1.0, epsabs=tol, epsrel=0.0, norm="2", limit=limit)
    return complex(np.sum(res)), float(err * np.sqrt(n))


# --------------------------------------------------------------------------
# Taylor jets


def _series_mul(a, b):
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
    for n in range(out.shape[0]):
        for i in range(n + 1):
            out[n] += a[i] * b[n - i]
    return out


def _series_compose(fders, u):
    """Taylor coefficients of ``f(u(s))`` from ``f^{(k)}(u_0)`` and those of ``u``."""
    du = np.array(u, dtype=np.result_type(u, fders), copy=True)
    du[0] = 0
    power = np.zeros_like(du)
    power[0] = 1
    out = np.zeros(np.broadcast_shapes(du.shape, fders.shape), dtype=np.result_type(du, fders))
    for k in range(du.shape[0]):
        out = out + fders[k] / factorial(k) * power
        power = _series_mul(power, du)
    return out


def _to_derivs(series):
    return np.stack([series[n] * factorial(n) for n in range(series.shape[0])])


def _to_series(derivs):
    return np.stack([derivs[n] / factorial(n) for n in range(derivs.shape[0])])


def phi_derivative(t, k: int):
    """``k``-th derivative of the cutoff ``phi`` (and of ``zeta``)."""
    t = np.asarray(t, float)
    if k == 0:
        return CUTOFFS.phi(t)
    return -smooth_step(np.abs(t) - 1, k) * np.sign(t) ** k


def chi1_derivative(xi, k: int):
    xi = np.asarray(xi, float)
    return plateau(np.abs(xi), *CUTOFFS.chi1_band, deriv=k) * np.sign(xi) ** k


def free_amplitude_jet(d: float, sigma: float) -> Callable:
    """Jet of ``q(xi) = chi1(xi) zeta(d - sigma a'(xi))``: ``q(xi, order)`` has shape ``(order+1, n)``."""

    def q(xi, order):
        xi = np.atleast_1d(np.asarray(xi, float))
        u = _to_series(np.stack([d - sigma * dispersion_symbol(xi, 1)] + [
            -sigma * dispersion_symbol(xi, k + 1) for k in range(1, order + 1)
        ]))
        z = _series_compose(np.stack([phi_derivative(u[0], k) for k in range(order + 1)]), u)
        c = _to_series(np.stack([chi1_derivative(xi, k) for k in range(order + 1)]))
        return _to_derivs(_series_mul(c, z))

    return q


# --------------------------------------------------------------------------
# phases


@dataclass(frozen=True)
class PhaseBundle:
    """A phase with its first two derivatives on ``domain``."""

    theta: Callable
    dtheta: Callable
    ddtheta: Callable
    domain: tuple

    def samples(self, n: int = CHECK_SAMPLES):
        xi = np.linspace(*self.domain, n)
        return xi, np.asarray(self.theta(xi)), np.asarray(self.dtheta(xi)), np.asarray(self.ddtheta(xi))


def quadratic_phase(domain=(-1.0, 1.0), scale: float = 1.0) -> PhaseBundle:
    """``phi = scale xi^2 / 2``."""
    return PhaseBundle(
        lambda x: scale * np.asarray(x) ** 2 / 2,
        lambda x: scale * np.asarray(x, float),
        lambda x: np.full(np.shape(x), float(scale)),
        tuple(map(float, domain)),
    )


def free_phase(d: float, sigma: float, domain) -> PhaseBundle:
    """Real phase ``sigma a(xi) - d xi``, the conjugate of the free kernel phase, increasing derivative."""
    return PhaseBundle(
        lambda x: sigma * dispersion_symbol(x) - d * np.asarray(x),
        lambda x: sigma * dispersion_symbol(x, 1) - d,
        lambda x: sigma * dispersion_symbol(x, 2),
        tuple(map(float, domain)),
    )


def _wrap(d, length):
    return (np.asarray(d, float) + length / 2) % length - length / 2


# --------------------------------------------------------------------------
# stationary phase lemma


@dataclass(frozen=True)
class StationaryPhaseResult:
    integral: complex | None
    bound: float | None
    holds: bool | None
    quadrature_error: float = 0.0
    diagnostic: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.integral, self.bound, self.holds))


def lemma_preconditions(pb: PhaseBundle, h: float, rho: float, n: int = CHECK_SAMPLES) -> dict:
    """Measured ``max|Im phi| / h``, ``max|Im phi''| / rho`` and ``Re phi'' / rho`` range."""
    _, th, _, dd = pb.samples(n)
    rep = {
        "im_phi_over_h": float(np.max(np.abs(np.imag(th)))) / h,
        "im_phi2_over_rho": float(np.max(np.abs(np.imag(dd)))) / rho,
        "re_phi2_min_over_rho": float(np.min(np.real(dd))) / rho,
        "re_phi2_max_over_rho": float(np.max(np.real(dd))) / rho,
    }
    tol = 1e-12
    rep["ok"] = bool(
        rep["im_phi_over_h"] <= 1 + tol
        and rep["im_phi2_over_rho"] <= 1 + tol
        and rep["re_phi2_min_over_rho"] >= 0.5 - tol
        and rep["re_phi2_max_over_rho"] <= 1 + tol
    )
    return rep


def _sup_and_variation(p, lo, hi, n=20 * CHECK_SAMPLES):
    v = np.asarray(p(np.linspace(lo, hi, n)))
    return float(np.max(np.abs(v))), float(np.sum(np.abs(np.diff(v))))


def stationary_phase_bound(pb: PhaseBundle, p: Callable, h: float, rho: float, *, tol: float = 1e-10):
    """Compare ``int exp(i phi / h) p`` with ``(8 |p|_inf + 2 int |p'|) (h / rho)^{1/2}``.

    When a precondition fails the result carries the measured quantities in
    ``diagnostic`` and no bound.
    """
    pre = lemma_preconditions(pb, h, rho)
    if not pre["ok"]:
        return StationaryPhaseResult(None, None, None, 0.0, pre)
    lo, hi = pb.domain
    xi, _, d1, _ = pb.samples()
    slope = float(np.max(np.abs(d1)))
    width = 2 * np.pi * h / (POINTS_PER_OSCILLATION * max(slope, 1e-300))
    val, err = oscillatory_quad(lambda x: np.exp(1j * pb.theta(x) / h) * p(x), lo, hi, width, tol)
    sup, var = _sup_and_variation(p, lo, hi)
    bound = (8 * sup + 2 * var) * np.sqrt(h / rho)
    return StationaryPhaseResult(val, float(bound), bool(abs(val) <= bound), err, pre)


def random_phase_case(rng: np.random.Generator):
    """A seeded ``(phase, amplitude, h, rho)`` satisfying the lemma's preconditions."""
    h = 2.0 ** -int(rng.integers(4, 11))
    rho = float(rng.uniform(0.5, 4.0))
    lo, hi = -float(rng.uniform(0.2, 1.5)), float(rng.uniform(0.2, 1.5))
    w1, c1 = float(rng.uniform(0.5, 4.0)), float(rng.uniform(0, 2 * np.pi))
    slope = float(rng.uniform(-1, 1)) * rho
    amp_im = float(rng.uniform(-0.95, 0.95))
    w2 = float(rng.uniform(0.5, 1.0)) * min(10.0, np.sqrt(rho / (h * max(abs(amp_im), 1e-3))))
    c2 = float(rng.uniform(0, 2 * np.pi))

    def theta(x):
        x = np.asarray(x, float)
        re = rho * (0.375 * x**2 - 0.24 * np.sin(w1 * x + c1) / w1**2) + slope * x
        return re + 1j * h * amp_im * np.sin(w2 * x + c2)

    def dtheta(x):
        x = np.asarray(x, float)
        re = rho * (0.75 * x - 0.24 * np.cos(w1 * x + c1) / w1) + slope
        return re + 1j * h * amp_im * w2 * np.cos(w2 * x + c2)

    def ddtheta(x):
        x = np.asarray(x, float)
        re = rho * (0.75 + 0.24 * np.sin(w1 * x + c1))
        return re - 1j * h * amp_im * w2**2 * np.sin(w2 * x + c2)

    k = int(rng.integers(1, 4))
    coef = rng.normal(size=(k + 1, 2)) / 2
    nu = float(rng.uniform(0.5, 6.0))
    shifts = rng.uniform(0, 2 * np.pi, size=k + 1)

    def p(x):
        x = np.asarray(x, float)
        return sum((coef[m, 0] + 1j * coef[m, 1]) * np.cos(m * nu * x + shifts[m]) for m in range(k + 1))

    return PhaseBundle(theta, dtheta, ddtheta, (lo, hi)), p, h, rho


# --------------------------------------------------------------------------
# Van der Corput chain


@dataclass(frozen=True)
class VanDerCorputResult:
    J: np.ndarray
    differences: np.ndarray
    constant: float
    lower: float
    stationary_point: float | None
    quadrature_error: float

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.J, dtype=dtype)


def van_der_corput_recursion(
    pb: PhaseBundle, q: Callable, h: float, sigma: float, k_max: int = 3, *, tol: float = 1e-12
) -> VanDerCorputResult:
    """``J_k = (-1)^k (h/i)^k int e^{i theta / h} theta'^{-k} q^{(k)}`` over ``[rho + (h/sigma)^{1/2}, beta]``.

    ``q(xi, order)`` returns the derivatives ``q, q', ..., q^{(order)}``.  ``rho``
    is the zero of ``theta'`` (the left end of the domain when ``theta' > 0``
    throughout).  The returned differences are ``|J_k - J_{k+1}|`` for ``k < k_max + 1``
    and ``constant`` is their maximum over ``(h / sigma)^{1/2}``.
    """
    lo, hi = pb.domain
    xi, th, d1, d2 = pb.samples()
    if np.iscomplexobj(th) and np.max(np.abs(np.imag(th))) > 0:
        raise ValueError("the recursion needs a real phase")
    if np.any(np.real(d2) <= 0):
        raise ValueError(
            f"theta' is not increasing on the domain: theta'' in [{np.min(d2):.3g}, {np.max(d2):.3g}]"
        )
    f1 = lambda x: float(np.real(pb.dtheta(np.array([x])))[0])
    scale = np.sqrt(h / sigma)
    if f1(lo) >= 0:
        rho, lower = None, lo
    elif f1(hi) <= 0:
        rho, lower = None, hi
    else:
        rho = brentq(f1, lo, hi, xtol=1e-15, rtol=1e-15)
        lower = min(rho + scale, hi)
    slope = float(np.max(np.abs(d1)))
    width = 2 * np.pi * h / (POINTS_PER_OSCILLATION * max(slope, 1e-300))
    J = np.zeros(k_max + 2, dtype=complex)
    err = 0.0
    for k in range(k_max + 2):
        c = (-1) ** k * (h / 1j) ** k

        def f(x, k=k):
            return np.exp(1j * np.real(pb.theta(x)) / h) * np.real(pb.dtheta(x)) ** (-k) * q(x, k)[k]

        val, e = oscillatory_quad(f, lower, hi, width, tol)
        J[k] = c * val
        err = max(err, abs(c) * e)
    diffs = np.abs(np.diff(J))
    return VanDerCorputResult(J, diffs, float(np.max(diffs) / scale), float(lower), rho, err)


# --------------------------------------------------------------------------
# kernel


@dataclass(frozen=True)
class KernelEval:
    value: complex
    bound: float
    quadrature_error: float
    constant: float = float("nan")
    lemma_bound: float = float("inf")
    trivial_bound: float = float("inf")
    diagnostics: dict = field(default_factory=dict)


def _at_x(rows: np.ndarray, grid: Grid1D, x: float) -> np.ndarray:
    """Trigonometric interpolation of ``rows (n_x, n_xi)`` at one point."""
    pts = np.full((1, rows.shape[1]), float(x))
    if np.iscomplexobj(rows):
        return _trig_eval(rows.real, grid, pts)[0] + 1j * _trig_eval(rows.imag, grid, pts)[0]
    return _trig_eval(rows, grid, pts)[0]


def _smooth_factor(amp: AmplitudeSolution, i_s: int):
    """``(g, exponential)`` with ``b = chi1 g`` or ``b = chi1 exp(g)``."""
    n = amp.terms.shape[0]
    w = amp.h ** (amp.mu0 * np.arange(n))
    if amp.kind == "polynomial":
        return np.tensordot(w, amp.normalized[:, i_s], axes=1), False
    return np.tensordot(w, amp.terms[:, i_s], axes=1), True


def _check_pair(eik: EikonalSolution, amp: AmplitudeSolution):
    if amp.sigma.shape != eik.sigma.shape or np.any(amp.sigma != eik.sigma) or amp.grid != eik.grid:
        raise ValueError("amplitude and eikonal solutions live on different grids")


def _zeta_window(d, sigma, lo, hi, n=CHECK_SAMPLES):
    """Sub-interval of ``[lo, hi]`` where ``zeta(d - sigma a'(xi))`` can be non-zero."""
    xi = np.linspace(lo, hi, n)
    live = np.abs(d - sigma * dispersion_symbol(xi, 1)) < 2
    if not live.any():
        return None
    i0, i1 = np.flatnonzero(live)[[0, -1]]
    step = xi[1] - xi[0]
    return max(lo, xi[i0] - step), min(hi, xi[i1] + step)


def evaluate_kernel(
    eik: EikonalSolution,
    amp: AmplitudeSolution,
    sigma: float,
    x: float,
    z: float,
    h: float | None = None,
    *,
    rel_tol: float = 1e-10,
) -> KernelEval:
    """``K(sigma, x, z)`` with its quadrature error and stationary-phase bound."""
    _check_pair(eik, amp)
    h = eik.h if h is None else h
    if abs(h - eik.h) > 1e-15:
        raise RegimeError("h differs from the one the phase was built with")
    i_s = eik.sigma_index(sigma)
    grid = eik.grid
    d = float(_wrap(x - z, grid.length))
    sq = np.sqrt(h)
    xi = eik.xi
    psi = _at_x(eik.psi[i_s], grid, x)
    dpsi = _at_x(eik.dxi_psi[i_s], grid, x)
    ddpsi = _at_x(eik.dxixi_psi[i_s], grid, x)
    g, expo = _smooth_factor(amp, i_s)
    g = _at_x(g, grid, x)
    gdd = xi_derivatives(g[None, :], xi, 2)[0] if expo else None
    scale = (1 / h) * np.sqrt(h / sigma) if sigma > 0 else 1 / h
    epsabs = rel_tol * scale

    def interp(v, t):
        return xi_interpolate(v, xi, t)

    def weight(t):
        gi = interp(g, t)
        return CUTOFFS.chi1(t) * (np.exp(gi) if expo else gi) * CUTOFFS.zeta(d - sigma * dispersion_symbol(t, 1))

    def phase(t):
        return d * t - sigma * dispersion_symbol(t) + sq * interp(psi, t)

    def integrand(t):
        return np.exp(1j * phase(t) / h) * weight(t) / (2 * np.pi * h)

    value, qerr = 0j, 0.0
    lemma, trivial = 0.0, 0.0
    diag = {"pieces": 0, "preconditions_ok": True, "d2theta_min": np.inf, "d2theta_max": -np.inf}
    for lo, hi in ((-XI_HI, -XI_LO), (XI_LO, XI_HI)):
        win = _zeta_window(d, sigma, lo, hi)
        if win is None:
            continue
        a, b = win
        t = np.linspace(a, b, CHECK_SAMPLES)
        d1 = d - sigma * dispersion_symbol(t, 1) + sq * interp(dpsi, t)
        width = 2 * np.pi * h / (POINTS_PER_OSCILLATION * 1.1 * max(float(np.max(np.abs(d1))), 1e-300))
        v, e = oscillatory_quad(integrand, a, b, width, epsabs / 2)
        value += v
        qerr += e
        w = weight(t)
        trivial += float(np.trapezoid(np.abs(w), t)) / (2 * np.pi * h)
        if sigma <= h:
            continue
        # conjugate phase phi = -conj(theta) has phi'' > 0; the amplitude drops e^{theta~}
        d2 = -(-sigma * dispersion_symbol(t, 2) + sq * interp(ddpsi, t))
        im1 = np.zeros_like(t)
        im2 = np.zeros_like(t)
        p = w
        if expo:
            gt = interp(g, t)
            im1 = -h * gt.real
            im2 = -h * interp(gdd, t).real
            d2 = d2 + h * interp(gdd, t).imag
            p = w * np.exp(-gt)
        diag["d2theta_min"] = min(diag["d2theta_min"], float(-d2.max()))
        diag["d2theta_max"] = max(diag["d2theta_max"], float(-d2.min()))
        if np.any(d2 <= 0):
            raise RegimeError(
                f"phase convexity window violated: d2theta in [{-d2.max():.4g}, {-d2.min():.4g}]"
            )
        i0 = 0
        while i0 < t.size - 1:
            i1 = i0 + 1
            lo_v = hi_v = d2[i0]
            while i1 < t.size:
                lo_v, hi_v = min(lo_v, d2[i1]), max(hi_v, d2[i1])
                if hi_v > 2 * lo_v:
                    break
                i1 += 1
            seg = slice(i0, min(i1, t.size - 1) + 1)
            rho = 2 * float(np.min(d2[seg]))
            if np.max(np.abs(im1[seg])) > h * (1 + 1e-12) or np.max(np.abs(im2[seg])) > rho:
                diag["preconditions_ok"] = False
            ps = p[seg]
            lemma += (8 * np.max(np.abs(ps)) + 2 * np.sum(np.abs(np.diff(ps)))) * np.sqrt(h / rho)
            diag["pieces"] += 1
            i0 = seg.stop - 1
    lemma = lemma / (2 * np.pi * h) if sigma > h else np.inf
    bound = min(lemma, trivial)
    diag["resolved"] = bool(qerr <= 1e-8 * max(abs(value), scale))
    const = bound * h * np.sqrt(sigma / h) if sigma > 0 else float("nan")
    return KernelEval(complex(value), float(bound), float(qerr), float(const), float(lemma), float(trivial), diag)


XI_LO, XI_HI = CUTOFFS.chi1_band[0], CUTOFFS.chi1_band[3]


def kernel_phase_bundle(eik: EikonalSolution, sigma: float, x: float, z: float, band: int = 1) -> PhaseBundle:
    """Conjugated real phase ``-(Phi - z xi)`` on the zeta window of one band (linear kind)."""
    if eik.kind != "linear":
        raise ValueError("the real kernel phase needs a linear eikonal solution")
    i_s = eik.sigma_index(sigma)
    d = float(_wrap(x - z, eik.grid.length))
    sq = np.sqrt(eik.h)
    rows = [_at_x(a[i_s], eik.grid, x) for a in (eik.psi, eik.dxi_psi, eik.dxixi_psi)]
    lo, hi = (XI_LO, XI_HI) if band > 0 else (-XI_HI, -XI_LO)
    win = _zeta_window(d, sigma, lo, hi)
    if win is None:
        raise ValueError("zeta vanishes on this band")
    f = lambda r: (lambda t: xi_interpolate(r, eik.xi, t))
    p0, p1, p2 = (f(r) for r in rows)
    return PhaseBundle(
        lambda t: sigma * dispersion_symbol(t) - d * np.asarray(t) - sq * p0(t),
        lambda t: sigma * dispersion_symbol(t, 1) - d - sq * p1(t),
        lambda t: sigma * dispersion_symbol(t, 2) - sq * p2(t),
        win,
    )


def kernel_amplitude_jet(amp: AmplitudeSolution, sigma: float, x: float, z: float) -> Callable:
    """Jet of ``conj(b zeta(d - sigma a'))`` in xi for a polynomial amplitude."""
    if amp.kind != "polynomial":
        raise ValueError("jets are provided for the polynomial amplitude")
    i_s = int(np.argmin(np.abs(amp.sigma - sigma)))
    d = float(_wrap(x - z, amp.grid.length))
    g, _ = _smooth_factor(amp, i_s)
    g = np.conj(_at_x(g, amp.grid, x))
    free = free_amplitude_jet(d, sigma)

    def q(t, order):
        t = np.atleast_1d(np.asarray(t, float))
        gd = [g] + [xi_derivatives(g[None, :], amp.xi, k)[0] for k in range(1, order + 1)]
        gs = _to_series(np.stack([xi_interpolate(v, amp.xi, t) for v in gd]))
        return _to_derivs(_series_mul(gs, _to_series(free(t, order))))

    return q


# --------------------------------------------------------------------------
# parametrix assembly


@dataclass(frozen=True)
class ParametrixRun:
    t_grid: np.ndarray
    states: tuple
    initial_defect: float | None
    diagnostics: dict = field(default_factory=dict)


def _resample(arr: np.ndarray, n_new: int) -> np.ndarray:
    """Spectral interpolation of periodic samples along axis 0 onto ``n_new`` points."""
    n = arr.shape[0]
    if n_new == n:
        return arr
    hat = np.fft.fft(arr, axis=0)
    out = np.zeros((n_new,) + arr.shape[1:], dtype=complex)
    k = min(n, n_new) // 2
    out[:k] = hat[:k]
    out[-k + 1 :] = hat[-k + 1 :]
    res = np.fft.ifft(out, axis=0) * (n_new / n)
    return res if np.iscomplexobj(arr) else res.real


def _signed_index(n):
    return np.fft.fftfreq(n, 1.0 / n).round().astype(np.int64)


def _assemble_hat(
    eik: EikonalSolution,
    amp: AmplitudeSolution,
    i_s: int,
    u_hat: np.ndarray,
    fine: Grid1D,
    *,
    phase_sigma: float | None = None,
    defect: bool = False,
    n_coarse: int = 1024,
    chunk: int = 256,
):
    """FFT-order coefficients of the parametrix applied to ``u_hat`` at ``sigma[i_s]``.

    ``U = sum_k e^{i eta_k x} S_k(x)`` with ``S_k`` built on a coarse grid from
    the phase correction, the amplitude and the cutoff convolved with ``u``.
    With ``defect`` also returns the coefficients of ``i h^{-3/2} sum_k (a(hD) - a(h eta_k)) S_k``.
    """
    h = eik.h
    sq = np.sqrt(h)
    sigma = float(eik.sigma[i_s])
    ps = sigma if phase_sigma is None else phase_sigma
    n = fine.n_points
    nc = min(n_coarse, n)
    coarse = Grid1D(nc, fine.length)
    kint = _signed_index(n)
    mint = _signed_index(nc)
    xi_k = h * fine.fft_frequencies
    live = np.flatnonzero(CUTOFFS.chi1(xi_k) > 0)
    zhat = np.fft.fft(CUTOFFS.zeta(_wrap(coarse.nodes, coarse.length))) / nc
    theta_m = coarse.fft_frequencies
    g_rows, expo = _smooth_factor(amp, i_s)
    psi_rows = eik.psi[i_s]
    out = np.zeros(n, dtype=complex)
    dout = np.zeros(n, dtype=complex) if defect else None
    a_fine = dispersion_symbol(xi_k)
    for start in range(0, live.size, chunk):
        ks = live[start : start + chunk]
        xk = xi_k[ks]
        psi_c = _resample(xi_interpolate(psi_rows, eik.xi, xk), nc)
        g_c = _resample(xi_interpolate(g_rows, eik.xi, xk), nc)
        fac = np.exp(1j * psi_c / sq) * CUTOFFS.chi1(xk) * (np.exp(g_c) if expo else g_c)
        src = kint[ks][:, None] + mint[None, :]
        inside = (src >= -(n // 2)) & (src < n // 2)
        c = np.where(inside, u_hat[src % n], 0)
        c = c * zhat[None, :] * np.exp(-1j * sigma * np.outer(dispersion_symbol(xk, 1), theta_m))
        S = np.fft.ifft(c, axis=1) * nc * fac.T * np.exp(-1j * ps * dispersion_symbol(xk) / h)[:, None]
        Sh = np.fft.fft(S, axis=1) / nc
        ok = inside  # same index set: destination k + m
        idx = src[ok] % n
        vals = Sh[ok]
        out += np.bincount(idx, vals.real, n) + 1j * np.bincount(idx, vals.imag, n)
        if defect:
            rows = np.broadcast_to(dispersion_symbol(xk)[:, None], src.shape)[ok]
            dv = 1j * h**-1.5 * (a_fine[idx] - rows) * vals
            dout += np.bincount(idx, dv.real, n) + 1j * np.bincount(idx, dv.imag, n)
    return (out, dout) if defect else out


def _band_check(u: Field, h: float, tol: float = 1e-20):
    xi = np.abs(h * u.grid.fft_frequencies)
    e = np.abs(u.hat) ** 2
    outside = e[(xi < 0.5 - 1e-12) | (xi > 2 + 1e-12)].sum()
    if outside > tol * max(e.sum(), 1e-300):
        raise RegimeError("u0 spectrum leaves the block band [1/(2h), 2/h]")


def l1_norm(f: Field) -> float:
    return float(np.sum(np.abs(f.values)) * f.grid.spacing)


def l2(f_values: np.ndarray, grid: Grid1D) -> float:
    return float(np.sqrt(np.sum(np.abs(f_values) ** 2) * grid.spacing))


def assemble_parametrix(
    eik: EikonalSolution, amp: AmplitudeSolution, u0_block: Field, t_grid, *, n_coarse: int = 1024
) -> ParametrixRun:
    """The parametrix applied to block data at the times ``t_grid`` (nodes ``t / h^{1/2}`` of the phase)."""
    _check_pair(eik, amp)
    h = eik.h
    _band_check(u0_block, h)
    if abs(u0_block.grid.length - eik.grid.length) > 1e-12 * eik.grid.length:
        raise ValueError("u0 and the phase live on tori of different lengths")
    t_grid = np.atleast_1d(np.asarray(t_grid, float))
    fine = u0_block.grid
    states = []
    for t in t_grid:
        i_s = eik.sigma_index(t / np.sqrt(h))
        states.append(Field.from_hat(fine, _assemble_hat(eik, amp, i_s, u0_block.hat, fine, n_coarse=n_coarse)))
    defect = None
    zero = np.flatnonzero(t_grid == 0)
    if zero.size:
        v0 = states[zero[0]].values - u0_block.values
        defect = l2(v0, fine) / l1_norm(u0_block)
    return ParametrixRun(t_grid, tuple(states), defect, {"n_coarse": min(n_coarse, fine.n_points)})


def kernel_profile(eik: EikonalSolution, amp: AmplitudeSolution, sigma: float, z: float, fine: Grid1D) -> Field:
    """``x -> K(sigma, x, z)`` on ``fine``: the assembly applied to a point mass at ``z``."""
    _check_pair(eik, amp)
    u_hat = np.exp(-1j * fine.fft_frequencies * z) / fine.length
    return Field.from_hat(fine, _assemble_hat(eik, amp, eik.sigma_index(sigma), u_hat, fine))


def block_parametrix(
    coeff: CoefficientField,
    h: float,
    delta: float,
    sigmas,
    *,
    M: int = 2,
    kind: str = "polynomial",
    grid: Grid1D | None = None,
    n_xi: int = 33,
    tau0: float | None = None,
):
    """Phase and amplitude of order ``M`` on the given sigma nodes."""
    sigmas = np.asarray(sigmas, float)
    grid = Grid1D(128, coeff.length) if grid is None else grid
    xi = xi_samples(n_xi)
    if kind == "polynomial":
        eik = solve_linear_eikonal(coeff, h, delta, xi, sigmas.max(), sigma=sigmas, grid=grid)
        return eik, solve_transport_polynomial(eik, J=M, M_terms=3)
    if kind == "exponential":
        eik = solve_quasilinear_eikonal(coeff, h, delta, xi, sigmas.max(), sigma=sigmas, grid=grid, tau0=tau0)
        return eik, solve_transport_exponential(eik, M=M - 1)
    raise ValueError(f"unknown amplitude kind {kind!r}")


#: sigma step of the centred difference used for the residual
RESIDUAL_STEP = 1e-4


def residual_stencil(sigma0: float, e: float = RESIDUAL_STEP) -> np.ndarray:
    if sigma0 - 2 * e <= 0:
        raise ValueError("sigma0 too close to 0 for the centred difference")
    return sigma0 + e * np.arange(-2, 3)


def parametrix_residual(
    eik: EikonalSolution, amp: AmplitudeSolution, u0_block: Field, sigma0: float, *, e: float = RESIDUAL_STEP
) -> float:
    """``|L_0 U|_{L^2} / |u0|_{L^2}`` at ``t = sigma0 h^{1/2}``.

    ``L_0 = d_t + (W d_x + d_x W) / 2 + i h^{-3/2} a(hD)``.  The fast phase
    ``exp(-i sigma a(h eta_k) / h)`` is differentiated exactly; the rest by a
    fourth-order centred difference.
    """
    _check_pair(eik, amp)
    h = eik.h
    fine = u0_block.grid
    idx = [eik.sigma_index(s) for s in residual_stencil(sigma0, e)]
    R = [_assemble_hat(eik, amp, i, u0_block.hat, fine, phase_sigma=sigma0) for i in (idx[0], idx[1], idx[3], idx[4])]
    U, D = _assemble_hat(eik, amp, idx[2], u0_block.hat, fine, defect=True)
    dR = (R[0] - 8 * R[1] + 8 * R[2] - R[3]) / (12 * e)
    n = fine.n_points
    vals = lambda c: np.fft.ifft(c) * n
    coef = eik.coefficient
    t = sigma0 * np.sqrt(h)
    W = coef.field(fine, t).values.real
    Wx = coef.field(fine, t, 1).values.real
    Ux = vals(U * 1j * fine.fft_frequencies)
    res = vals(dR) / np.sqrt(h) + vals(D) + W * Ux + 0.5 * Wx * vals(U)
    return l2(res, fine) / l2(u0_block.values, fine)


def duhamel_bound(
    coeff: CoefficientField,
    h: float,
    delta: float,
    u0_block: Field,
    t: float,
    *,
    M: int = 2,
    n_nodes: int = 4,
    grid: Grid1D | None = None,
) -> dict:
    """``int_0^t |L_0 U(s)| ds / |u0| + |U(0) - u0| / |u0|`` with Gauss-Legendre nodes in time."""
    sq = np.sqrt(h)
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    s_nodes = (x + 1) / 2 * t
    sig_nodes = s_nodes / sq
    allsig = np.concatenate([[0.0], np.concatenate([residual_stencil(s) for s in sig_nodes]), [t / sq]])
    eik, amp = block_parametrix(coeff, h, delta, allsig, M=M, grid=grid)
    res = np.array([parametrix_residual(eik, amp, u0_block, s) for s in sig_nodes])
    integral = float(np.sum(w * res) * t / 2)
    run = assemble_parametrix(eik, amp, u0_block, [0.0, t])
    v0 = l2(run.states[0].values - u0_block.values, u0_block.grid) / l2(u0_block.values, u0_block.grid)
    return {"bound": integral + v0, "residuals": res, "times": s_nodes, "initial": v0, "state": run.states[1]}


# --------------------------------------------------------------------------
# symbolic expansion


@dataclass(frozen=True)
class DifferentiableSymbol:
    """A symbol ``a(xi)`` with derivatives up to ``max_order``: ``fn(xi, k)``."""

    fn: Callable
    max_order: int
    description: str = ""

    def __call__(self, xi, k: int = 0):
        if k > self.max_order:
            raise ValueError(f"derivative of order {k} unavailable (max {self.max_order})")
        return self.fn(xi, k)


DISPERSION = DifferentiableSymbol(dispersion_symbol, 64, "chi0(xi)|xi|^{3/2}")


@dataclass(frozen=True)
class ExpansionCheck:
    exact: Field
    partial_sums: tuple
    remainders: np.ndarray
    terms: tuple


def semiclassical_expansion_check(
    a: DifferentiableSymbol, b: Field, phi: Field, h: float, M: int, *, slope: float = 0.0
) -> ExpansionCheck:
    """Compare ``e^{-i phi/h} a(hD)(b e^{i phi/h})`` with ``sum_{k<m} A_k``, ``m = 1..M``.

    ``phi`` is ``slope x`` plus the periodic field ``phi``.  ``A_k`` uses the
    Taylor coefficients of ``rho(x, x + s) = sum_n phi^{(n+1)}(x) s^n / (n+1)!``.
    Remainders are sup norms over the grid.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    a(np.zeros(1), 2 * (M - 1))  # rejects symbols without enough derivatives
    grid = b.grid
    if phi.grid != grid:
        raise ValueError("b and phi must share a grid")
    turns = slope * grid.length / (2 * np.pi * h)
    if abs(turns - round(turns)) > 1e-9:
        raise ValueError("exp(i slope x / h) is not periodic on the grid")
    x = grid.nodes
    phase = np.exp(1j * (slope * x + phi.values.real) / h)
    wave = Field(grid, b.values * phase)
    exact_vals = np.conj(phase) * np.fft.ifft(a(h * grid.fft_frequencies) * wave.hat) * grid.n_points
    exact = Field(grid, exact_vals)
    K = M - 1
    ik = 1j * grid.fft_frequencies
    dphi = [np.fft.ifft(phi.hat * ik**m).real * grid.n_points for m in range(1, K + 2)]
    dphi[0] = dphi[0] + slope
    r = np.stack([dphi[n] / factorial(n + 1) for n in range(K + 1)])  # rho Taylor coefficients
    bs = np.stack([np.fft.ifft(b.hat * ik**n) * grid.n_points / factorial(n) for n in range(K + 1)])
    terms, sums, rem = [], [], []
    acc = np.zeros(grid.n_points, dtype=complex)
    for k in range(M):
        fders = np.stack([a(r[0], k + j) for j in range(k + 1)] + [np.zeros_like(r[0])] * (K - k))
        comp = _series_compose(fders[: k + 1], r[: k + 1])
        prod = _series_mul(comp, bs[: k + 1])
        Ak = h**k / (1j**k * factorial(k)) * prod[k] * factorial(k)
        terms.append(Field(grid, Ak))
        acc = acc + Ak
        sums.append(Field(grid, acc.copy()))
        rem.append(float(np.max(np.abs(exact_vals - acc))))
    return ExpansionCheck(exact, tuple(sums), np.array(rem), tuple(terms))
