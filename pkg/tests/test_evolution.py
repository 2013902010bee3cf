import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from dispersive_lab._validation import InvariantViolation
from dispersive_lab.eikonal import CoefficientField
from dispersive_lab.evolution import (
    band_fraction,
    flat_halfwave,
    inner,
    propagate,
    propagate_inhomogeneous,
)
from dispersive_lab.spectral import CUTOFFS, Field, Grid1D, dispersion_symbol

L = 4 * np.pi
H = 2**-6
T1 = 0.05


def packet(h=H, shift=0.0):
    j = int(round(-np.log2(h)))
    g = Grid1D(2 ** (j + 5), L)
    eta = g.fft_frequencies
    return Field.from_hat(g, CUTOFFS.chi(h * eta) * np.exp(-1j * eta * (L / 2 + shift)) / L)


def l2(f):
    return np.sqrt(np.sum(np.abs(f.values) ** 2) * f.grid.spacing)


@pytest.fixture(scope="module")
def bump_run():
    return propagate(packet(), CoefficientField.bump(L), 0, T1, h=H)


def test_zero_coefficient_is_the_multiplier():
    u0 = packet()
    run = propagate(u0, None, 0, T1, h=H)
    ex = u0.hat * np.exp(-1j * T1 * H**-1.5 * dispersion_symbol(H * u0.grid.fft_frequencies))
    assert np.max(np.abs(run.states[-1].hat - ex)) <= 1e-12


def test_l2_conserved(bump_run):
    assert bump_run.diagnostics["max_drift"] <= 1e-8
    assert bump_run.diagnostics["band_ok"]
    assert np.all(np.abs(bump_run.l2_history / bump_run.l2_history[0] - 1) <= 1e-8)


def test_second_order_in_dt(bump_run):
    u0 = packet()
    W = CoefficientField.bump(L)
    dt = 4 * bump_run.dt
    sols = [propagate(u0, W, 0, T1, dt / 2**k, h=H).states[-1].values for k in range(3)]
    order = np.log2(np.linalg.norm(sols[0] - sols[1]) / np.linalg.norm(sols[1] - sols[2]))
    assert order >= 1.8


def test_group_property():
    u0 = packet()
    W = CoefficientField.traveling(L, 1.0)
    dt = 1e-4
    whole = propagate(u0, W, 0, 0.04, dt, h=H, t_record=[0.02])
    half = propagate(whole.state_at(0.02), W, 0.02, 0.04, dt, h=H)
    assert np.max(np.abs(whole.states[-1].values - half.states[-1].values)) <= 1e-12 * np.max(np.abs(u0.values))


def test_adjoint_identity():
    u0 = packet()
    v = packet(shift=0.7)
    W = CoefficientField.traveling(L, 0.5)
    Su = propagate(u0, W, 0, T1, h=H).states[-1]
    Sv = propagate(v, W, T1, 0, h=H).states[-1]
    rel = abs(inner(Su, v) - inner(u0, Sv)) / (l2(u0) * l2(v))
    assert rel <= 1e-10


def test_backward_run_inverts_forward(bump_run):
    back = propagate(bump_run.states[-1], CoefficientField.bump(L), T1, 0, h=H)
    u0 = packet()
    assert l2(Field(u0.grid, back.states[-1].values - u0.values)) / l2(u0) <= 1e-6


def test_drift_guard_trips_on_huge_step():
    with pytest.raises(InvariantViolation):
        propagate(packet(), CoefficientField.bump(L, amp=5.0), 0, 0.05, 0.05, h=H)


def test_recorded_times(bump_run):
    run = propagate(packet(), CoefficientField.bump(L), 0, T1, h=H, t_record=[0.01, 0.03])
    assert np.allclose(run.t_grid, [0, 0.01, 0.03, T1])
    with pytest.raises(ValueError):
        run.state_at(0.02)


def test_zero_source_gives_zero():
    g = packet().grid
    run = propagate_inhomogeneous(lambda t: Field(g, np.zeros(g.n_points)), CoefficientField.bump(L), 0, 0.01, h=H, grid=g)
    assert not np.any(run.states[-1].values)


def test_inhomogeneous_single_mode_oracle():
    g = packet().grid
    xi0 = 100.0
    prof = lambda t: np.cos(3 * t) + t
    f = lambda t: Field(g, prof(t) * np.exp(1j * xi0 * g.nodes))
    run = propagate_inhomogeneous(f, None, 0, T1, h=H, grid=g)
    om = H**-1.5 * dispersion_symbol(H * xi0)
    kern = lambda s: np.exp(-1j * (T1 - s) * om) * prof(s)
    re = quad(lambda s: kern(s).real, 0, T1, limit=500, epsabs=1e-14)[0]
    im = quad(lambda s: kern(s).imag, 0, T1, limit=500, epsabs=1e-14)[0]
    assert np.max(np.abs(run.states[-1].values - (re + 1j * im) * np.exp(1j * xi0 * g.nodes))) <= 1e-8


def test_band_fraction_of_packet():
    assert band_fraction(packet(), H) == pytest.approx(1.0)
    g = packet().grid
    assert band_fraction(Field(g, np.cos(g.nodes)), H) <= 1e-20


# -- flat half-wave flow


@settings(max_examples=20, deadline=None)
@given(st.integers(-30, 30), st.floats(-2.0, 2.0))
def test_flat_flow_single_mode(k, t):
    g = Grid1D(128, L)
    xi = 2 * np.pi * k / L
    f = Field(g, np.exp(1j * xi * g.nodes))
    out = flat_halfwave(f, t)
    assert np.max(np.abs(out.values - np.exp(-1j * t * abs(xi) ** 1.5) * f.values)) <= 1e-12


def test_flat_flow_identity_at_zero():
    u = packet()
    assert np.array_equal(flat_halfwave(u, 0.0).values, u.values)


def test_flat_flow_peak_moves_at_group_velocity():
    g = Grid1D(4096, 16 * np.pi)
    xi0 = 64.0
    x0 = 5.0
    u = Field(g, np.exp(-((g.nodes - x0) ** 2) / 0.5) * np.exp(1j * xi0 * g.nodes))
    t = 1.5
    out = flat_halfwave(u, t)
    expected = x0 + 1.5 * np.sqrt(xi0) * t
    assert abs(g.nodes[np.argmax(np.abs(out.values))] - expected) <= 2 * g.spacing


@settings(max_examples=15, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_flat_flow_group_law(s, t):
    u = packet()
    a = flat_halfwave(flat_halfwave(u, s), t).values
    b = flat_halfwave(u, s + t).values
    assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(u.values))
