"""Amplitudes for the block parametrix.

Polynomial kind: ``b = sum_j h^{j mu0} b_j`` on the linear phase, with

    L b_0 = 0,  b_0(0) = chi1(xi),
    L b_j = -h^{-mu0} E[b_{j-1}],  b_j(0) = 0,

where ``L = d_sigma + a'(xi) d_x + i f`` and ``f = V psi_x + a''(xi) psi_x^2 / 2``.
``E`` collects everything that conjugating the block operator by
``exp(i Phi / h)`` produces beyond ``L``: the Taylor tail of the symbol at
``xi + h^{1/2} psi_x``, the first-order term of the symbolic expansion, the
transport by ``V`` and, when requested, the second-order term ``A_2``.  With
this choice the hierarchy telescopes and the conjugated residual of
``b`` is ``h^{(J-1) mu0} E[b_{J-1}]``.

Each ``b_j`` is solved by Duhamel's formula in the frame ``y = x - sigma a'(xi)``,
where ``L`` becomes ``d_sigma + i f``; the sigma-integrals use Chebyshev panels.

Exponential kind: ``b = chi1(xi) exp(sum_p h^{p mu0} theta_p)`` on the
quasilinear phase, with ``L = d_sigma + (a'(xi + h^{1/2} psi_x) + h^{1/2} V) d_x``,

    L theta_0 = -(h^{1/2} / 2) (psi_xx a''(xi + h^{1/2} psi_x) + V_x),
    h^{(p+1) mu0} L theta_{p+1} = Q(theta_{<=p}) - Q(theta_{<=p-1}),  Q(nothing) = 0,

where ``Q(theta) = -(i / h) A_2[e^theta] / e^theta``.  The ``theta_p`` are
integrated as companions of the characteristic flow, where ``L`` is ``d/ds``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import InvariantViolation
from .eikonal import (
    CoefficientField,
    EikonalSolution,
    _linear_hat,
    solve_characteristics,
    xi_derivatives,
)
from .spectral import CUTOFFS, Grid1D, dispersion_symbol

PANEL_WIDTH = 0.1
PANEL_NODES = 12
# envelopes are measured only where the amplitude cutoff is visible in double precision;
# at the band edges the symbol's own cutoff bends and its high derivatives dominate
SUPPORT_FLOOR = 1e-12


@dataclass(frozen=True)
class AmplitudeSolution:
    """Amplitude hierarchy on ``sigma x grid x xi``.

    ``terms[j]`` holds ``b_j`` (polynomial) or ``theta_p`` (exponential);
    ``normalized[j]`` is ``b_j / chi1(xi)`` for the polynomial kind and
    ``theta_p`` otherwise.
    """

    kind: str
    order: int
    mu0: float
    h: float
    delta: float
    epsilon: float
    xi: np.ndarray
    sigma: np.ndarray
    grid: Grid1D
    terms: np.ndarray
    normalized: np.ndarray
    assembled_b: np.ndarray
    expansion_terms: int = 2
    diagnostics: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# Chebyshev panels in sigma


def _lobatto(n):
    return -np.cos(np.pi * np.arange(n) / (n - 1))


def _cumulative_matrix(n):
    """``C @ f(nodes)`` is ``int_{-1}^{t_i} f`` at the Lobatto nodes, exact for degree ``< n``."""
    t = _lobatto(n)
    C = np.empty((n, n))
    V = np.polynomial.chebyshev.chebvander(t, n - 1)
    Vinv = np.linalg.inv(V)
    for k in range(n):
        coef = Vinv[:, k]
        C[:, k] = np.polynomial.chebyshev.chebval(t, np.polynomial.chebyshev.chebint(coef, lbnd=-1))
    C[0] = 0.0
    return C


@dataclass(frozen=True)
class _Panels:
    edges: np.ndarray
    nodes: np.ndarray  # (P, n)
    cmat: np.ndarray

    @classmethod
    def build(cls, breakpoints, width=PANEL_WIDTH, n=PANEL_NODES):
        edges = [0.0]
        for a, b in zip(breakpoints[:-1], breakpoints[1:]):
            m = max(1, int(np.ceil((b - a) / width - 1e-9)))
            edges.extend(list(a + (b - a) * np.arange(1, m + 1) / m))
        edges = np.array(edges)
        t = (_lobatto(n) + 1) / 2
        nodes = edges[:-1, None] + (edges[1:] - edges[:-1])[:, None] * t[None, :]
        return cls(edges, nodes, _cumulative_matrix(n))

    @property
    def flat(self):
        return self.nodes.ravel()

    def cumulative(self, vals):
        """``int_0^sigma`` at every node; ``vals`` has shape ``(P * n, ...)``."""
        P, n = self.nodes.shape
        v = vals.reshape((P, n) + vals.shape[1:])
        half = ((self.edges[1:] - self.edges[:-1]) / 2).reshape((P,) + (1,) * (v.ndim - 1))
        inner = np.einsum("ij,pj...->pi...", self.cmat, v) * half
        carry = np.concatenate([np.zeros((1,) + inner.shape[2:], inner.dtype), np.cumsum(inner[:, -1], axis=0)[:-1]])
        return (inner + carry[:, None]).reshape(vals.shape)

    def index_of(self, s):
        """Flat node index carrying the value at panel edge ``s``."""
        k = int(np.argmin(np.abs(self.edges - s)))
        if abs(self.edges[k] - s) > 1e-12 * max(1.0, s):
            raise ValueError(f"sigma = {s} is not a panel edge")
        n = self.nodes.shape[1]
        return 0 if k == 0 else (k - 1) * n + n - 1


# --------------------------------------------------------------------------
# spectral helpers


def _coef_hats(coef, grid, sigma):
    """FFT-order coefficients of ``V(sigma, .)`` for every sigma, shape ``(n_s, n)``."""
    return np.stack([coef.hat_on(grid, s * np.sqrt(coef.h)) for s in sigma])


def _real_from(hat, grid, mult=None):
    h = hat if mult is None else hat * mult
    return np.fft.ifft(h, axis=-1).real * grid.n_points


def _dmult(grid, order):
    th = (1j * grid.fft_frequencies) ** order
    if order % 2:
        th[grid.n_points // 2] = 0
    return th


def _dy(vals, grid, order=1):
    return np.fft.ifft(np.fft.fft(vals, axis=-1) * _dmult(grid, order), axis=-1)


def _shift(vals, grid, dist):
    """``v(y + dist)`` per row; ``dist`` broadcasts over the leading axis."""
    ph = np.exp(1j * np.multiply.outer(np.atleast_1d(dist), grid.fft_frequencies))
    ph[:, grid.n_points // 2] = np.cos(np.atleast_1d(dist) * grid.fft_frequencies[grid.n_points // 2])
    out = np.fft.ifft(np.fft.fft(vals, axis=-1) * ph, axis=-1)
    return out.real if np.isrealobj(vals) else out


# --------------------------------------------------------------------------
# polynomial kind


def _symbol_jet(rho, n):
    return [dispersion_symbol(rho, k) for k in range(n + 1)]


@dataclass
class _FrameData:
    """Moving-frame data for one xi sample on every panel node."""

    psi_x: np.ndarray
    psi_xx: np.ndarray
    psi_xxx: np.ndarray
    V: np.ndarray
    Vx: np.ndarray
    f: np.ndarray


def _frame_data(coef, grid, xi, sig):
    a1 = dispersion_symbol(xi, 1)
    a2 = dispersion_symbol(xi, 2)
    ph = np.exp(1j * np.multiply.outer(sig * a1, grid.fft_frequencies))
    ph[:, grid.n_points // 2] = 0
    ph_hat = _linear_hat(coef, sig, np.array([xi]), grid)[:, :, 0] * ph
    imag = np.max(np.abs(np.fft.ifft(ph_hat, axis=-1).imag)) * grid.n_points
    v_hat = _coef_hats(coef, grid, sig) * ph
    px = _real_from(ph_hat, grid, _dmult(grid, 1))
    V = _real_from(v_hat, grid)
    f = V * px + 0.5 * a2 * px**2
    return _FrameData(
        px,
        _real_from(ph_hat, grid, _dmult(grid, 2)),
        _real_from(ph_hat, grid, _dmult(grid, 3)),
        V,
        _real_from(v_hat, grid, _dmult(grid, 1)),
        f,
    ), imag


def _conjugation_defect(beta, d: _FrameData, xi, h, grid, expansion_terms):
    """``E[beta]`` in the moving frame."""
    sq = np.sqrt(h)
    a0, a1, a2 = (dispersion_symbol(xi, k) for k in range(3))
    rho = xi + sq * d.psi_x
    A = _symbol_jet(rho, 4 if expansion_terms >= 3 else 2)
    by = _dy(beta, grid)
    tail = (A[0] - a0 - sq * a1 * d.psi_x - 0.5 * h * a2 * d.psi_x**2) / h
    E = (
        1j * tail * beta
        + (A[1] - a1) * by
        + 0.5 * sq * d.psi_xx * A[2] * beta
        + sq * (d.V * by + 0.5 * d.Vx * beta)
    )
    if expansion_terms >= 3:
        ry = 0.5 * sq * d.psi_xx
        ryy = sq * d.psi_xxx / 3
        byy = _dy(beta, grid, 2)
        E = E - 0.5j * h * (A[4] * ry**2 * beta + A[3] * ryy * beta + 2 * A[3] * ry * by + A[2] * byy)
    return E


def solve_transport_polynomial(
    eik: EikonalSolution,
    coeff: CoefficientField | None = None,
    J: int = 3,
    M_terms: int = 3,
    *,
    real_tol: float = 1e-10,
) -> AmplitudeSolution:
    """Transport hierarchy ``b_0..b_{J-1}`` on a linear phase.

    ``M_terms`` is the number of symbolic-expansion terms ``A_0..A_{M_terms-1}``
    kept in the source (2 or 3).
    """
    if eik.kind != "linear":
        raise ValueError("the polynomial amplitude needs a linear eikonal solution")
    if J < 1 or not 2 <= M_terms <= 3:
        raise ValueError("need J >= 1 and M_terms in {2, 3}")
    coef = eik.coefficient
    if coeff is not None:
        ref = coeff.smoothed(eik.h, eik.delta)
        if ref.modes.shape != coef.modes.shape or np.max(np.abs(ref.modes - coef.modes)) > 1e-12:
            raise ValueError("coefficient differs from the one the phase was built with")
    h, grid, xi_all = eik.h, eik.grid, eik.xi
    mu0 = eik.mu0
    panels = _Panels.build(eik.sigma)
    sig = panels.flat
    out_idx = [panels.index_of(s) for s in eik.sigma]
    chi1 = CUTOFFS.chi1(xi_all)
    ns, nx, nq = eik.sigma.size, grid.n_points, xi_all.size
    c = np.zeros((J, ns, nx, nq), dtype=complex)
    worst_imag = 0.0
    for q, xi in enumerate(xi_all):
        d, imag = _frame_data(coef, grid, xi, sig)
        worst_imag = max(worst_imag, imag)
        if imag > real_tol:
            raise InvariantViolation(f"phase correction has imaginary part {imag:.2e}; f is not real")
        F = panels.cumulative(d.f)
        gauge = np.exp(-1j * F)
        beta = gauge.astype(complex)
        betas = [beta]
        for _ in range(1, J):
            g = -(h**-mu0) * _conjugation_defect(betas[-1], d, xi, h, grid, M_terms)
            beta = gauge * panels.cumulative(np.conj(gauge) * g)
            betas.append(beta)
        a1 = dispersion_symbol(xi, 1)
        for j, bt in enumerate(betas):
            rows = bt[out_idx]
            c[j, :, :, q] = _shift(rows, grid, -eik.sigma * a1)
    terms = c * chi1
    weights = h ** (mu0 * np.arange(J))
    assembled = np.tensordot(weights, terms, axes=1)
    return AmplitudeSolution(
        "polynomial",
        J,
        mu0,
        h,
        eik.delta,
        eik.epsilon,
        xi_all,
        eik.sigma,
        grid,
        terms,
        c,
        assembled,
        M_terms,
        {"max_imag_psi": worst_imag, "panels": panels.nodes.shape[0]},
    )


# --------------------------------------------------------------------------
# exponential kind


def _seed_derivative(vals, n):
    th = np.fft.fftfreq(n, 1.0 / n) * 1j
    th[n // 2] = 0
    return np.fft.ifft(np.fft.fft(vals, axis=0) * th[:, None], axis=0)


def _exp_rhs_factory(coef, grid, xi, h, mu0, M):
    sq = np.sqrt(h)
    w0 = 2 * np.pi / grid.length
    n = grid.n_points

    def d_seed(v):
        out = _seed_derivative(v, n) * w0
        return out.real if np.isrealobj(v) else out

    def Q(theta, ry, ryy, A):
        tx = d_seed(theta) / Xx_cur[0]
        txx = d_seed(tx) / Xx_cur[0]
        return 0.5j * h * (A[4] * ry**2 + A[3] * ryy + 2 * A[3] * ry * tx + A[2] * (txx + tx**2))

    Xx_cur = [None]

    def rhs(s, st, ex):
        X, Z, Xx, Zx, _ = st
        Xx_cur[0] = Xx
        rho = xi + sq * Z
        A = _symbol_jet(rho, 4)
        pxx = Zx / Xx
        pxxx = d_seed(pxx) / Xx
        Vx = coef.V(s, X, 1)
        out = np.empty_like(ex)
        out[0] = -0.5 * sq * (pxx * A[2] + Vx)
        if M:
            ry = 0.5 * sq * pxx
            ryy = sq * pxxx / 3
            partial = np.zeros_like(ex[0])
            q_prev = np.zeros_like(ex[0])
            for p in range(M):
                partial = partial + h ** (p * mu0) * ex[p]
                q_now = Q(partial, ry, ryy, A)
                out[p + 1] = (q_now - q_prev) * h ** (-(p + 1) * mu0)
                q_prev = q_now
        return out

    return rhs


def solve_transport_exponential(
    eik: EikonalSolution,
    coeff: CoefficientField | None = None,
    M: int = 2,
    *,
    envelope_cap: float = 10.0,
    ds: float | None = None,
) -> AmplitudeSolution:
    """``theta_0..theta_M`` along the characteristics of the quasilinear phase."""
    if eik.kind != "quasilinear":
        raise ValueError("the exponential amplitude needs a quasilinear eikonal solution")
    if M < 0:
        raise ValueError("M must be non-negative")
    coef = eik.coefficient
    if coeff is not None:
        ref = coeff.smoothed(eik.h, eik.delta)
        if ref.modes.shape != coef.modes.shape or np.max(np.abs(ref.modes - coef.modes)) > 1e-12:
            raise ValueError("coefficient differs from the one the phase was built with")
    h, grid, xi = eik.h, eik.grid, eik.xi
    mu0 = eik.mu0
    rhs = _exp_rhs_factory(coef, grid, xi, h, mu0, M)
    init = np.zeros((M + 1, grid.n_points, xi.size), dtype=complex)
    flow = solve_characteristics(
        coef, h, eik.delta, xi, eik.sigma[-1], grid=grid, s_out=eik.sigma, extra_rhs=rhs, extra_init=init, ds=ds
    )
    lag = flow.extras["lagrangian"]  # (n_s, M+1, n, n_xi)
    theta = np.empty((M + 1,) + (eik.sigma.size, grid.n_points, xi.size), dtype=complex)
    for p in range(M + 1):
        theta[p] = flow.pull_back(lag[:, p].real) + 1j * flow.pull_back(lag[:, p].imag)
    lam = np.sqrt(h)
    live = CUTOFFS.chi1(xi) >= SUPPORT_FLOOR
    for p in range(M + 1):
        for k in range(2):
            v = lam**k * _x_derivative(theta[p][..., live], grid, k)
            top = float(np.max(np.abs(v)))
            if not np.isfinite(top) or top > envelope_cap:
                raise InvariantViolation(f"envelope of theta_{p} at Lambda^{k} is {top:.3g} > {envelope_cap:g}")
    weights = h ** (mu0 * np.arange(M + 1))
    total = np.tensordot(weights, theta, axes=1)
    chi1 = CUTOFFS.chi1(xi)
    assembled = np.zeros_like(total)
    assembled[..., live] = chi1[live] * np.exp(total[..., live])
    return AmplitudeSolution(
        "exponential",
        M,
        mu0,
        h,
        eik.delta,
        eik.epsilon,
        xi,
        eik.sigma,
        grid,
        theta,
        theta,
        assembled,
        3,
        {"tau0": eik.tau0},
    )


# --------------------------------------------------------------------------
# envelopes


def _x_derivative(arr, grid, order):
    """``d_x^order`` along axis 1 of ``(n_s, n_x, n_xi)``."""
    if order == 0:
        return arr
    m = _dmult(grid, order)
    return np.fft.ifft(np.fft.fft(arr, axis=1) * m[None, :, None], axis=1)


def envelope_report(sol: AmplitudeSolution) -> dict:
    """Sup of each derivative over its growth envelope.

    Polynomial: ``|d_x^alpha d_xi^k c_j| / (h^{-k eps} h^{-(alpha + k)(delta + 3 eps)})`` for ``alpha + k <= 2``.
    Only xi samples with ``chi1(xi) >= SUPPORT_FLOOR`` enter.
    Exponential, with ``Lambda = h^{1/2} d_x``: ``|Lambda^k theta_p|``,
    ``|Lambda^k d_xi theta_p| / (h^{-delta} sigma)`` and
    ``|Lambda^k d_xi^2 theta_p| / (h^{-1/2 - 2 delta} sigma)`` for ``k = 0, 1``.
    """
    h, d, eps, grid, xi = sol.h, sol.delta, sol.epsilon, sol.grid, sol.xi
    live = CUTOFFS.chi1(xi) >= SUPPORT_FLOOR
    out = {}
    if sol.kind == "polynomial":
        for j, c in enumerate(sol.normalized):
            dxi = [a[..., live] for a in (c, xi_derivatives(c, xi, 1), xi_derivatives(c, xi, 2))]
            for k in range(3):
                for alpha in range(3 - k):
                    q = _x_derivative(dxi[k], grid, alpha)
                    env = h ** (-k * eps) * h ** (-(alpha + k) * (d + 3 * eps))
                    out[f"c{j}_x{alpha}_xi{k}"] = float(np.max(np.abs(q))) / env
        return out
    pos = sol.sigma > 0
    s = sol.sigma[pos][:, None, None]
    lam = np.sqrt(h)
    for p, th in enumerate(sol.normalized):
        d1 = xi_derivatives(th, xi, 1)[pos][..., live]
        d2 = xi_derivatives(th, xi, 2)[pos][..., live]
        for k in range(2):
            scale = lam**k
            out[f"theta{p}_L{k}"] = float(np.max(np.abs(scale * _x_derivative(th[..., live], grid, k))))
            out[f"theta{p}_L{k}_xi1"] = float(np.max(np.abs(scale * _x_derivative(d1, grid, k)) / (h**-d * s)))
            out[f"theta{p}_L{k}_xi2"] = float(
                np.max(np.abs(scale * _x_derivative(d2, grid, k)) / (h ** (-0.5 - 2 * d) * s))
            )
    return out
