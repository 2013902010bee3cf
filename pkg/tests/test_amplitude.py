import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from dispersive_lab.amplitude import (
    _cumulative_matrix,
    _lobatto,
    envelope_report,
    solve_transport_exponential,
    solve_transport_polynomial,
)
from dispersive_lab.eikonal import (
    CoefficientField,
    solve_linear_eikonal,
    solve_quasilinear_eikonal,
    xi_samples,
)
from dispersive_lab.spectral import CUTOFFS, Grid1D, dispersion_symbol

L = 4 * np.pi
G = Grid1D(64, L)
XI = xi_samples(5)
CHI1 = CUTOFFS.chi1(XI)


def lin(W, h=2**-6, sigma_max=1.0, n_sigma=5, xi=XI, grid=G):
    return solve_linear_eikonal(W, h, 0.1, xi, sigma_max, grid=grid, n_sigma=n_sigma)


def ql(W, h=2**-6, s_max=1.0, n_sigma=5, grid=G):
    return solve_quasilinear_eikonal(W, h, 0.1, XI, s_max, grid=grid, tau0=0.25, n_sigma=n_sigma)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=12, max_size=12))
def test_cumulative_matrix_exact_on_polynomials(coefs):
    t = _lobatto(12)
    p = np.polynomial.Polynomial(coefs)
    ref = p.integ(lbnd=-1)(t)
    got = _cumulative_matrix(12) @ p(t)
    assert np.max(np.abs(got - ref)) <= 1e-11 * max(1.0, np.max(np.abs(ref)))


def test_zero_coefficient_polynomial():
    amp = solve_transport_polynomial(lin(CoefficientField.zero(L)), J=3)
    assert np.array_equal(amp.terms[0], np.broadcast_to(CHI1, amp.terms[0].shape).astype(complex))
    assert not np.any(amp.terms[1:])


def test_constant_coefficient_keeps_b0():
    amp = solve_transport_polynomial(lin(CoefficientField.constant(L, 0.3)), J=2)
    assert np.max(np.abs(amp.terms[0] - CHI1)) <= 1e-13


def test_modulus_law_for_real_f():
    amp = solve_transport_polynomial(lin(CoefficientField.bump(L)), J=1)
    assert np.max(np.abs(np.abs(amp.terms[0]) - np.abs(CHI1))) <= 1e-10


def test_initial_data_and_support():
    W = CoefficientField.traveling(L, 1.0)
    for amp in (
        solve_transport_polynomial(lin(W), J=3),
        solve_transport_exponential(ql(W), M=2),
    ):
        assert np.max(np.abs(amp.assembled_b[0] - CHI1)) <= 1e-12
        assert not np.any(amp.assembled_b[..., CHI1 == 0])
    assert np.all(np.abs(solve_transport_polynomial(lin(W), J=3).terms[1:, 0]) == 0)


def test_b0_against_rk4_along_characteristic():
    h = 2**-8
    W = CoefficientField.bump(L, width=1.2)
    xi = xi_samples(3)
    eik = lin(W, h=h, xi=xi, n_sigma=3)
    amp = solve_transport_polynomial(eik, W, J=1)
    V = eik.coefficient.V
    q = 4
    x_i = 11
    xq = xi[q]
    a1 = dispersion_symbol(xq, 1)
    a2 = dispersion_symbol(xq, 2)
    y = G.nodes[x_i] - eik.sigma[-1] * a1

    def f(s):
        x = y + s * a1
        # psi_x from its own integral representation, independent of the mode formula
        px = -xq * quad(lambda sp: V(sp, x + (sp - s) * a1, 1), 0, s, epsabs=1e-14, epsrel=1e-14)[0] if s else 0.0
        return V(s, x) * px + 0.5 * a2 * px**2

    n = 200
    ds = eik.sigma[-1] / n
    beta = 1.0 + 0j
    for k in range(n):
        s = k * ds
        rhs = lambda s_, b_: -1j * f(s_) * b_
        k1 = rhs(s, beta)
        k2 = rhs(s + ds / 2, beta + ds / 2 * k1)
        k3 = rhs(s + ds / 2, beta + ds / 2 * k2)
        k4 = rhs(s + ds, beta + ds * k3)
        beta += ds / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    assert abs(amp.normalized[0, -1, x_i, q] - beta) <= 1e-8


def test_higher_terms_shrink_with_h():
    W = CoefficientField.bump(L)
    sizes = []
    for h in (2**-6, 2**-8, 2**-10):
        amp = solve_transport_polynomial(lin(W, h=h), J=2)
        sizes.append(np.max(np.abs(amp.terms[1])))
    assert sizes[0] > sizes[1] > sizes[2]


def test_kind_mismatch_rejected():
    W = CoefficientField.bump(L)
    with pytest.raises(ValueError):
        solve_transport_polynomial(ql(W))
    with pytest.raises(ValueError):
        solve_transport_exponential(lin(W))
    with pytest.raises(ValueError):
        solve_transport_polynomial(lin(W), CoefficientField.bump(L, amp=0.2))


def test_exponential_trivial_cases():
    for W in (CoefficientField.zero(L), CoefficientField.constant(L, 0.3)):
        amp = solve_transport_exponential(ql(W), M=2)
        assert np.max(np.abs(amp.terms)) <= 1e-14
        assert np.max(np.abs(amp.assembled_b - CHI1)) <= 1e-14


def test_exponential_refinement_order():
    W = CoefficientField.bump(L)
    eik = ql(W, h=2**-6, s_max=1.0, n_sigma=3)
    runs = [solve_transport_exponential(eik, M=1, ds=d).terms for d in (0.2, 0.1, 0.025)]
    e1 = np.max(np.abs(runs[0] - runs[2]))
    e2 = np.max(np.abs(runs[1] - runs[2]))
    assert e1 / e2 >= 2**3 / 2


def test_envelope_zero_coefficient():
    amp = solve_transport_polynomial(lin(CoefficientField.zero(L)), J=2)
    rep = envelope_report(amp)
    assert rep.pop("c0_x0_xi0") == 1.0
    assert all(v == 0 for v in rep.values())
    amp = solve_transport_exponential(ql(CoefficientField.constant(L, 0.2)), M=1)
    assert all(v == 0 for v in envelope_report(amp).values())


@pytest.mark.parametrize("kind", ["polynomial", "exponential"])
def test_envelopes_do_not_grow_with_h(kind):
    W = CoefficientField.bump(L)
    reps = []
    for h in (2**-6, 2**-8, 2**-10):
        if kind == "polynomial":
            amp = solve_transport_polynomial(lin(W, h=h, grid=Grid1D(128, L)), J=3)
        else:
            eik = ql(W, h=h, s_max=2.0, grid=Grid1D(128, L))
            amp = solve_transport_exponential(eik, M=2)
        reps.append(envelope_report(amp))
    for key in reps[0]:
        vals = np.array([r[key] for r in reps])
        assert np.all(np.isfinite(vals)) and vals.max() <= 4 * max(vals[0], 1e-300), key
