import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import simpson

from dispersive_lab._validation import RegimeError
from dispersive_lab.eikonal import CoefficientField, semiclassical_regime
from dispersive_lab.oscillatory import (
    DISPERSION,
    DifferentiableSymbol,
    PhaseBundle,
    assemble_parametrix,
    block_parametrix,
    evaluate_kernel,
    free_amplitude_jet,
    free_phase,
    kernel_profile,
    l2,
    oscillatory_quad,
    parametrix_residual,
    quadratic_phase,
    random_phase_case,
    residual_stencil,
    semiclassical_expansion_check,
    stationary_phase_bound,
    van_der_corput_recursion,
)
from dispersive_lab.spectral import CUTOFFS, Field, Grid1D, dispersion_symbol

L = 4 * np.pi


def u0_for(h, power=5):
    j = int(round(-np.log2(h)))
    fine = Grid1D(2 ** (j + power), L)
    eta = fine.fft_frequencies
    return Field.from_hat(fine, CUTOFFS.chi(h * eta) * np.exp(-1j * eta * L / 2) / L)


@pytest.fixture(scope="module")
def free8():
    return block_parametrix(CoefficientField.zero(L), 2**-8, 0.1, [0.5, 1.0], M=1)


# -- quadrature


def test_oscillatory_quad_matches_closed_form():
    h = 1e-3
    val, err = oscillatory_quad(lambda x: np.exp(1j * x / h), 0.0, 1.0, 2 * np.pi * h / 5, 1e-12)
    ref = h / 1j * (np.exp(1j / h) - 1)
    assert abs(val - ref) <= 1e-11 and err <= 1e-10


# -- kernel


def test_free_kernel_against_dense_simpson(free8):
    eik, amp = free8
    h, d, s = 2**-8, 1.1, 1.0

    def side(xi):
        return (
            np.exp(1j * (d * xi - s * dispersion_symbol(xi)) / h)
            * CUTOFFS.chi1(xi)
            * CUTOFFS.zeta(d - s * dispersion_symbol(xi, 1))
        )

    xi = np.linspace(1 / 3, 3, 2_000_001)
    ref = (simpson(side(xi), x=xi) + simpson(side(-xi[::-1]), x=-xi[::-1])) / (2 * np.pi * h)
    k = evaluate_kernel(eik, amp, s, d + 0.3, 0.3)
    assert abs(k.value - ref) <= 1e-8
    assert k.quadrature_error <= 1e-8
    assert abs(k.value) <= k.bound


def test_free_kernel_translation_symmetry(free8):
    eik, amp = free8
    a = evaluate_kernel(eik, amp, 1.0, 1.4, 0.2).value
    b = evaluate_kernel(eik, amp, 1.0, 2.9, 1.7).value
    assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


def test_kernel_profile_matches_pointwise(free8):
    h = 2**-8
    eik, amp = block_parametrix(CoefficientField.bump(L), h, 0.1, [1.0], M=2)
    fine = Grid1D(2**13, L)
    prof = kernel_profile(eik, amp, 1.0, 0.2, fine)
    for i in (np.argmin(abs(fine.nodes - 1.3)), np.argmin(abs(fine.nodes - 0.9))):
        k = evaluate_kernel(eik, amp, 1.0, fine.nodes[i], 0.2)
        assert abs(prof.values[i] - k.value) <= 1e-8 * max(1.0, abs(k.value))


def test_trivial_bound_for_tiny_sigma():
    h = 2**-8
    eik, amp = block_parametrix(CoefficientField.zero(L), h, 0.1, [h / 2, 1.0], M=1)
    k = evaluate_kernel(eik, amp, h / 2, 0.25, 0.2)
    assert k.bound == k.trivial_bound and np.isinf(k.lemma_bound)
    assert abs(k.value) <= k.bound


def test_bound_uses_lemma_for_moderate_sigma(free8):
    eik, amp = free8
    k = evaluate_kernel(eik, amp, 1.0, 1.3, 0.2)
    assert k.lemma_bound < k.trivial_bound and k.diagnostics["preconditions_ok"]


def test_convexity_violation_names_range(free8):
    eik, amp = block_parametrix(CoefficientField.bump(L, amp=400.0, width=0.5), 2**-6, 0.1, [1.0], M=1)
    with pytest.raises(RegimeError, match="d2theta"):
        evaluate_kernel(eik, amp, 1.0, 0.0, 0.0)


def test_kernel_rejects_mismatched_h(free8):
    eik, amp = free8
    with pytest.raises(RegimeError):
        evaluate_kernel(eik, amp, 1.0, 1.0, 0.0, h=2**-7)


# -- stationary phase lemma


@pytest.mark.parametrize("h", [2**-4, 2**-8, 2**-12])
def test_quadratic_phase_tracks_gaussian_integral(h):
    r = stationary_phase_bound(quadratic_phase(), lambda x: np.ones_like(x), h, 1.0)
    assert r.holds
    # stationary point in the interior: |I| ~ (2 pi h)^{1/2}
    assert abs(abs(r.integral) / np.sqrt(2 * np.pi * h) - 1) <= 0.6
    assert r.quadrature_error <= 1e-10


def test_zero_amplitude():
    integral, bound, holds = stationary_phase_bound(quadratic_phase(), lambda x: 0 * x, 2**-6, 1.0)
    assert integral == 0 and bound == 0 and holds


def test_random_cases_hold():
    rng = np.random.default_rng(0)
    for _ in range(100):
        r = stationary_phase_bound(*random_phase_case(rng))
        assert r.diagnostic["ok"]
        assert r.holds, r
        assert r.quadrature_error <= 1e-10


def test_failed_precondition_reports_measurement():
    pb = quadratic_phase(scale=3.0)
    r = stationary_phase_bound(pb, lambda x: np.ones_like(x), 2**-6, 1.0)
    assert r.integral is None and r.bound is None and r.holds is None
    assert r.diagnostic["re_phi2_max_over_rho"] == pytest.approx(3.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 4.0), st.integers(4, 10), st.floats(-1.0, 1.0))
def test_bound_holds_for_shifted_quadratics(rho, j, shift):
    h = 2.0**-j
    pb = PhaseBundle(
        lambda x: rho * 0.75 * (x - shift) ** 2 / 2,
        lambda x: rho * 0.75 * (x - shift),
        lambda x: np.full(np.shape(x), 0.75 * rho),
        (-1.0, 1.0),
    )
    assert stationary_phase_bound(pb, lambda x: np.cos(3 * x) + 0j, h, rho).holds


# -- van der Corput chain


def _free_chain(sigma, h, d=1.0):
    q = free_amplitude_jet(d, sigma)
    return van_der_corput_recursion(free_phase(d, sigma, (1 / 3, 3)), lambda x, k: np.conj(q(x, k)), h, sigma, 3)


def test_vdc_zero_amplitude():
    r = van_der_corput_recursion(free_phase(1.0, 1.0, (1 / 3, 3)), lambda x, k: np.zeros((k + 1, np.size(x))), 2**-6, 1.0)
    assert not np.any(r.J) and r.constant == 0


def test_vdc_j0_against_direct_quadrature():
    h, sigma = 2**-8, 1.0
    r = _free_chain(sigma, h)
    q = free_amplitude_jet(1.0, sigma)
    pb = free_phase(1.0, sigma, (1 / 3, 3))
    x = np.linspace(r.lower, 3, 1_000_001)
    ref = simpson(np.exp(1j * pb.theta(x) / h) * np.conj(q(x, 0)[0]), x=x)
    assert abs(r.J[0] - ref) <= 1e-8
    assert r.lower == pytest.approx(r.stationary_point + np.sqrt(h / sigma))


@pytest.mark.parametrize("sigma", [1.0, 2.0])
def test_vdc_constant_stable_in_h(sigma):
    # d = sigma a'(1): stationary point at xi = 1
    cs = [_free_chain(sigma, 2.0**-j, d=1.5 * sigma) for j in (6, 8, 10)]
    consts = np.array([c.constant for c in cs])
    assert consts.max() <= 4 * consts.min()
    run = consts.max()
    for j, c in zip((6, 8, 10), cs):
        assert abs(c.J[2]) <= run * np.sqrt(2.0**-j / sigma)


def test_vdc_rejects_non_monotone_phase():
    pb = PhaseBundle(np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x), (0.0, 3.0))
    with pytest.raises(ValueError, match="increasing"):
        van_der_corput_recursion(pb, lambda x, k: np.ones((k + 1, np.size(x))), 2**-6, 1.0)


def test_vdc_rejects_complex_phase():
    pb = PhaseBundle(lambda x: x**2 + 1e-3j, lambda x: 2 * x, lambda x: 2 + 0 * x, (-1.0, 1.0))
    with pytest.raises(ValueError, match="real"):
        van_der_corput_recursion(pb, lambda x, k: np.ones((k + 1, np.size(x))), 2**-6, 1.0)


# -- assembly


def test_initial_defect_small():
    h = 2**-8
    eik, amp = block_parametrix(CoefficientField.bump(L), h, 0.1, [0.0, 1.0], M=2)
    run = assemble_parametrix(eik, amp, u0_for(h), [0.0])
    assert run.initial_defect <= 1e-6


def test_free_parametrix_is_the_exact_flow():
    h = 2**-8
    u0 = u0_for(h)
    eik, amp = block_parametrix(CoefficientField.zero(L), h, 0.1, [0.0, 0.5, 1.0], M=1)
    t = np.sqrt(h)
    run = assemble_parametrix(eik, amp, u0, [0.0, t])
    ex = np.fft.ifft(u0.hat * np.exp(-1j * t * h**-1.5 * dispersion_symbol(h * u0.grid.fft_frequencies))) * u0.grid.n_points
    assert l2(run.states[1].values - ex, u0.grid) / l2(ex, u0.grid) <= 1e-8


def test_residual_shrinks_with_order():
    h = 2**-8
    _, eps = semiclassical_regime(0.1)
    s0 = h**-eps / 2
    u0 = u0_for(h)
    res = []
    for M in (1, 2, 3):
        eik, amp = block_parametrix(CoefficientField.bump(L), h, 0.1, residual_stencil(s0), M=M)
        res.append(parametrix_residual(eik, amp, u0, s0))
    assert res[0] > res[1] > res[2]


def test_band_check_rejects_unlocalized_data():
    h = 2**-8
    eik, amp = block_parametrix(CoefficientField.zero(L), h, 0.1, [0.0, 1.0], M=1)
    fine = Grid1D(2**13, L)
    bad = Field(fine, np.exp(1j * 2 * fine.nodes))
    with pytest.raises(ValueError):
        assemble_parametrix(eik, amp, bad, [0.0])


# -- symbolic expansion


def test_expansion_plane_wave_exact():
    g = Grid1D(1024, 2 * np.pi)
    h, c, om = 2**-6, 1.5, 3.0
    b = Field(g, np.exp(1j * om * g.nodes))
    r = semiclassical_expansion_check(DISPERSION, b, Field(g, np.zeros(1024)), h, 3, slope=c)
    assert np.max(np.abs(r.exact.values - dispersion_symbol(c + h * om) * b.values)) <= 1e-12
    taylor = [
        dispersion_symbol(c + h * om) - sum(dispersion_symbol(c, k) * (h * om) ** k / np.prod(range(1, k + 1)) for k in range(m))
        for m in (1, 2, 3)
    ]
    assert np.allclose(r.remainders, np.abs(taylor), rtol=1e-8, atol=1e-13)


def test_expansion_zero_phase_low_frequency():
    g = Grid1D(256, 2 * np.pi)
    b = Field(g, np.cos(g.nodes) + 0.5 * np.sin(3 * g.nodes))
    r = semiclassical_expansion_check(DISPERSION, b, Field(g, np.zeros(256)), 2**-6, 3)
    assert np.max(r.remainders) <= 1e-13
    assert all(np.max(np.abs(t.values)) <= 1e-13 for t in r.terms)


@pytest.mark.parametrize("M", [1, 2, 3])
def test_expansion_remainder_slope(M):
    hs = [2.0**-j for j in range(5, 11)]
    g = Grid1D(8192, 2 * np.pi)
    x = g.nodes
    b = Field(g, np.exp(-4 * (x - np.pi) ** 2))
    phi = Field(g, 0.2 * np.exp(-2 * (x - np.pi) ** 2))
    rs = [semiclassical_expansion_check(DISPERSION, b, phi, h, M, slope=1.5).remainders[-1] for h in hs]
    slope = np.polyfit(np.log(hs), np.log(rs), 1)[0]
    assert slope >= M - 0.1


def test_expansion_remainders_decrease_in_order():
    g = Grid1D(8192, 2 * np.pi)
    x = g.nodes
    b = Field(g, np.exp(-4 * (x - np.pi) ** 2))
    phi = Field(g, 0.2 * np.exp(-2 * (x - np.pi) ** 2))
    r = semiclassical_expansion_check(DISPERSION, b, phi, 2**-8, 4, slope=1.5)
    assert np.all(np.diff(r.remainders) < 0)


def test_expansion_rejects_missing_derivatives():
    sym = DifferentiableSymbol(dispersion_symbol, 1)
    g = Grid1D(256, 2 * np.pi)
    f = Field(g, np.ones(256))
    with pytest.raises(ValueError, match="unavailable"):
        semiclassical_expansion_check(sym, f, f, 2**-6, 3)


def test_expansion_rejects_nonperiodic_slope():
    g = Grid1D(256, 2 * np.pi)
    f = Field(g, np.ones(256))
    with pytest.raises(ValueError, match="periodic"):
        semiclassical_expansion_check(DISPERSION, f, f, 2**-6, 1, slope=np.sqrt(2) * 1e-3)
