import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dispersive_lab.geometry import (
    ResolutionWarning,
    build_diffeo,
    compose_with_chi,
    compose_with_kappa,
    exp_i_symbol,
    gauge_symbol,
    paracompose,
    paracompose_correction,
    poisson_bracket_dispersion,
    pullback_symbol_defect,
)
from dispersive_lab.paradiff import (
    SymbolFn,
    block_slope,
    composition_defect,
    dyadic_field,
    monomial_factor,
    paraproduct_symbol,
    power_factor,
)
from dispersive_lab.spectral import Field, Grid1D, derivative, l2_norm, sobolev_norm

TWO_PI = 2 * np.pi
G = Grid1D(256, TWO_PI)


def smooth_eta(grid, rng, amp=0.1, kmax=3):
    x = grid.nodes
    w = 2 * np.pi / grid.length
    v = sum(
        amp * rng.normal() / k * np.sin(k * w * x + rng.uniform(0, TWO_PI)) for k in range(1, kmax + 1)
    )
    return Field(grid, v)


def bisection_inverse(chi_fn, y, lo, hi, iters=80):
    lo = np.full_like(y, lo)
    hi = np.full_like(y, hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = chi_fn(mid) < y
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def test_flat_profile_is_identity():
    d = build_diffeo(Field(G, np.zeros(G.n_points)))
    assert np.array_equal(d.chi_values, G.nodes)
    assert np.array_equal(d.kappa, G.nodes)
    assert not np.any(d.rho_part.values)
    u = Field.from_function(G, lambda x: np.exp(3j * x) + np.cos(20 * x))
    assert np.array_equal(paracompose(d, u).values, u.values)


def test_chi_prime_pointwise():
    d = build_diffeo(Field.from_function(G, lambda x: 0.1 * np.sin(x)))
    assert np.isclose(d.chi_prime.values[0].real, np.sqrt(1.01), rtol=1e-14)
    assert np.all(d.chi_prime.values.real >= 1)
    assert np.all(np.diff(d.chi_values) > 0)


def test_chi_quadrature_accuracy():
    d = build_diffeo(Field.from_function(G, lambda x: 0.1 * np.sin(x)))
    from scipy.integrate import quad

    for x in (0.7, 2.5, 5.9):
        ref = quad(lambda t: np.sqrt(1 + 0.01 * np.cos(t) ** 2), 0, x, epsabs=1e-14, epsrel=1e-14)[0]
        assert abs(d.chi_at(x) - ref) <= 1e-10


def test_kappa_against_bisection_oracle():
    rng = np.random.default_rng(0)
    d = build_diffeo(smooth_eta(G, rng))
    ys = d.image_grid.nodes
    ref = bisection_inverse(d.chi_at, ys, -0.5, G.length + 0.5)
    assert np.max(np.abs(d.kappa - ref)) <= 1e-9
    assert np.max(np.abs(d.kappa_at(d.chi_values) - G.nodes)) <= 1e-9
    assert np.max(np.abs(d.chi_at(d.kappa) - ys)) <= 1e-9
    kp = d.kappa_prime()
    assert np.all((kp > 0) & (kp <= 1))


def test_rho_part_interpolates_inverse():
    rng = np.random.default_rng(1)
    d = build_diffeo(smooth_eta(G, rng))
    from dispersive_lab.spectral import evaluate_at

    back = d.chi_values / d.mean_stretch + evaluate_at(d.rho_part, d.chi_values).real
    assert np.max(np.abs(back - G.nodes)) <= 1e-9


def test_non_real_eta_rejected():
    with pytest.raises(ValueError):
        build_diffeo(Field(G, 0.1j * np.sin(G.nodes)))


def test_low_frequency_u_paraproduct_negligible():
    # the correction acts through the high blocks of rho, which are tiny for smooth eta
    d = build_diffeo(Field.from_function(G, lambda x: 0.1 * np.sin(x)))
    u = Field.from_function(G, lambda x: np.cos(x) + 0.5 * np.sin(2 * x))
    diff = paracompose(d, u).values - compose_with_kappa(d, u).values
    assert np.max(np.abs(diff)) <= 1e-9


def test_recovery_identity():
    rng = np.random.default_rng(2)
    g = Grid1D(512, TWO_PI)
    d = build_diffeo(smooth_eta(g, rng))
    u = Field.from_function(g, lambda x: np.exp(2 * np.cos(x - 3) - 2) * np.cos(12 * x))
    back = compose_with_chi(d, paracompose(d, u)) + compose_with_chi(d, paracompose_correction(d, u))
    assert np.max(np.abs(back.values - u.values)) <= 1e-9


def test_resolution_loss_is_flagged():
    d = build_diffeo(Field.from_function(G, lambda x: 0.3 * np.sin(x)))
    u = Field.from_function(G, lambda x: np.cos(120 * x))
    with pytest.warns(ResolutionWarning):
        compose_with_kappa(d, u)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-2, 2), st.floats(-2, 2))
def test_paracompose_linear(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    d = build_diffeo(smooth_eta(G, rng, amp=0.05))
    u = Field.from_function(G, lambda x: np.cos(3 * x + rng.uniform()))
    v = Field.from_function(G, lambda x: np.sin(5 * x + rng.uniform()))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResolutionWarning)
        lhs = paracompose(d, alpha * u + beta * v).values
        rhs = alpha * paracompose(d, u).values + beta * paracompose(d, v).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(rhs)))


def test_composition_sobolev_proxy_stable():
    g = Grid1D(512, TWO_PI)
    for mu in (0, 1, 2):
        ratios = []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            d = build_diffeo(smooth_eta(g, rng))
            F = Field.from_function(g, lambda x: np.exp(2 * np.cos(x - 3) - 2) * np.cos((4 + seed) * x))
            Fk = compose_with_kappa(d, F)
            ratios.append(sobolev_norm(Fk, mu) / sobolev_norm(F, mu))
        assert max(ratios) / min(ratios) <= 4


def test_pullback_defect_identity():
    rng = np.random.default_rng(3)
    g = Grid1D(512, TWO_PI)
    d = build_diffeo(Field(g, np.zeros(g.n_points)))
    a = SymbolFn.multiplier(g, power_factor(1.5), 1.5)
    assert pullback_symbol_defect(d, a, dyadic_field(g, 5, rng)) <= 1e-9


def test_pullback_defect_decays():
    g = Grid1D(2048, TWO_PI)
    rng = np.random.default_rng(4)
    d = build_diffeo(Field.from_function(g, lambda x: 0.05 * np.sin(x)))
    a = SymbolFn.multiplier(g, monomial_factor(1), 1)
    js = [5, 6, 7, 8]
    vals = [pullback_symbol_defect(d, a, dyadic_field(g, j, rng)) for j in js]
    assert block_slope(js, vals) < 0


def test_gauge_trivial_and_closed_form():
    z = SymbolFn.separable(G, [(np.zeros(G.n_points), power_factor(0.5))], 0.5)
    xs = np.array([-3.0, 0.7, 2.0])
    assert np.max(np.abs(gauge_symbol(z).evaluate(xs))) == 0
    c = Field.from_function(G, np.cos)
    a = SymbolFn.separable(G, [(c.values, power_factor(0.5))], 0.5)
    g = gauge_symbol(a)
    vals = g.evaluate(xs)
    want = -(2 / 3) * np.outer(np.sin(G.nodes), np.sign(xs))
    assert np.max(np.abs(vals - want)) <= 1e-12
    br = poisson_bracket_dispersion(g, xs)
    assert np.max(np.abs(br + a.evaluate(xs))) <= 1e-10
    with pytest.raises(ValueError):
        g.evaluate(np.array([0.3]))


def test_gauge_xi_derivatives_match_finite_differences():
    c = Field.from_function(G, lambda x: np.cos(x) + 0.3 * np.sin(2 * x) + 0.2)
    a = SymbolFn.separable(G, [(c.values, power_factor(0.5)), (c.values**2, power_factor(0.5, odd=True))], 0.5)
    g = gauge_symbol(a)
    xi, h = np.array([1.7]), 1e-5
    fd = (g.evaluate(xi + h) - g.evaluate(xi - h)) / (2 * h)
    assert np.max(np.abs(fd - g.xi_derivative(xi, 1))) <= 1e-8
    fd2 = (g.xi_derivative(xi + h, 1) - g.xi_derivative(xi - h, 1)) / (2 * h)
    assert np.max(np.abs(fd2 - g.xi_derivative(xi, 2))) <= 1e-7


def test_gauge_conjugation_defect_decays():
    g = Grid1D(2048, 8 * np.pi)
    rng = np.random.default_rng(5)
    w = 2 * np.pi / g.length
    c = Field.from_function(g, lambda x: 0.3 * np.cos(w * x))
    a = SymbolFn.separable(g, [(c.values, power_factor(0.5))], 0.5)
    e = exp_i_symbol(gauge_symbol(a))
    js = [4, 5, 6, 7]
    vals = []
    for j in js:
        f = dyadic_field(g, j, rng)
        # commutator minus its leading bracket term: a # e - e # a to first order
        lhs = paraproduct_symbol(e, paraproduct_symbol(a, f)) - paraproduct_symbol(a, paraproduct_symbol(e, f))
        from dispersive_lab.paradiff import compose_symbols

        ea = compose_symbols(e, a, 2)
        ae = compose_symbols(a, e, 2)
        first = paraproduct_symbol(ea, f) - paraproduct_symbol(ae, f)
        vals.append(l2_norm(lhs - first) / l2_norm(f))
    assert block_slope(js, vals) < -0.5
