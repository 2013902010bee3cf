import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dispersive_lab.eikonal import CoefficientField
from dispersive_lab.estimates import (
    CSV_COLUMNS,
    DecaySamples,
    EstimateReport,
    TimeSeries,
    besov_aggregate,
    besov_partial_sums,
    dispersion_family,
    dispersion_fit,
    glue_windows,
    graded_times,
    linear_fit,
    near_delta,
    pooled_fit,
    strichartz_norm,
    strichartz_report,
    sup_norm,
)
from dispersive_lab.evolution import flat_halfwave, propagate
from dispersive_lab.spectral import Field, Grid1D


def test_linear_fit_exact_line():
    x = np.linspace(0, 1, 9)
    f = linear_fit(x, 3 * x - 2)
    assert f.slope == pytest.approx(3) and f.residual <= 1e-14 and f.n_samples == 9


def test_pooled_fit_separate_intercepts():
    x = np.linspace(0, 1, 7)
    f = pooled_fit([(x, -0.5 * x + 1), (x, -0.5 * x - 4), (x + 2, -0.5 * (x + 2) + 7)])
    assert f.slope == pytest.approx(-0.5) and f.residual <= 1e-13
    assert np.allclose(f.intercepts, [1, -4, 7])


# -- dispersion


@pytest.fixture(scope="module")
def flat_family():
    return dispersion_family(range(5, 9))


def test_flat_dispersion_exponents(flat_family):
    rep = dispersion_fit(flat_family)
    assert rep.passed, rep.summary()
    assert -0.55 <= rep.fitted_exponents["t"].slope <= -0.45
    assert -0.30 <= rep.fitted_exponents["h"].slope <= -0.20


def test_flat_family_matches_propagator():
    fam = dispersion_family([6], CoefficientField.zero(16 * np.pi), n_t=6)[0]
    u0 = near_delta(fam.h, Grid1D(2**12, 16 * np.pi))
    run = propagate(u0, None, 0, fam.t[-1], h=fam.h, t_record=fam.t)
    ref = np.array([sup_norm(run.state_at(t)) for t in fam.t])
    assert np.max(np.abs(ref - fam.sup) / fam.sup) <= 1e-10


def test_single_mode_has_no_decay():
    def mode(h, grid):
        k = int(round(grid.length / (2 * np.pi * h)))
        return Field(grid, np.exp(1j * 2 * np.pi * k / grid.length * grid.nodes))

    rep = dispersion_fit(dispersion_family(range(5, 8), initial=mode))
    assert abs(rep.fitted_exponents["t"].slope) <= 1e-8
    t_verdict = next(v for v in rep.verdicts if v.name == "t_exponent")
    assert t_verdict.status == "fail"


def test_noisy_fit_is_inconclusive():
    rng = np.random.default_rng(1)
    fam = []
    for j in (5, 6, 7):
        h = 2.0**-j
        t = np.geomspace(np.sqrt(h), 0.25, 20)
        sup = h**-0.25 * t**-0.5 * np.exp(rng.normal(0, 0.5, t.size))
        fam.append(DecaySamples(j, h, t, sup, 1.0, (np.sqrt(h), 0.25)))
    rep = dispersion_fit(fam)
    assert {v.status for v in rep.verdicts if v.name != "fit_residual"} == {"inconclusive"}
    assert not rep.passed


def test_fit_exact_power_law():
    fam = []
    for j in (5, 6, 7, 8):
        h = 2.0**-j
        t = np.geomspace(np.sqrt(h), 0.25, 10)
        fam.append(DecaySamples(j, h, t, 2.5 * h**-0.25 * t**-0.5, 1.0, (np.sqrt(h), 0.25)))
    rep = dispersion_fit(fam)
    assert rep.fitted_exponents["t"].slope == pytest.approx(-0.5, abs=1e-12)
    assert rep.fitted_exponents["h"].slope == pytest.approx(-0.25, abs=1e-12)
    assert np.allclose(rep.constants["prefactors"], 2.5 * np.array([2.0**-j for j in (5, 6, 7, 8)]) ** -0.25)


# -- Strichartz


def test_strichartz_zero_data():
    t = np.linspace(0, 1, 65)
    assert strichartz_norm(TimeSeries(t, np.zeros(65))) == 0.0


def test_strichartz_constant_profile():
    t = np.linspace(0, 2, 101)
    assert strichartz_norm(TimeSeries(t, np.full(101, 3.0))) == pytest.approx(3 * 2**0.25, rel=1e-13)


def test_strichartz_rejects_coarse_grid():
    t = np.linspace(0, 1, 63)
    with pytest.raises(ValueError, match="64"):
        strichartz_norm(TimeSeries(t, np.ones(63)))


def test_strichartz_accepts_runs():
    h = 2**-6
    u0 = near_delta(h, Grid1D(2**10, 4 * np.pi))
    t = graded_times(0.05, 65)
    run = propagate(u0, CoefficientField.bump(4 * np.pi), 0, t[-1], h=h, t_record=t)
    direct = strichartz_norm(TimeSeries(run.t_grid, np.array([sup_norm(s) for s in run.states])))
    assert strichartz_norm(run) == direct > 0


def test_strichartz_ratios_stable():
    rep = strichartz_report(range(5, 8), n_t=129)
    assert rep.passed, rep.summary()


# -- gluing


def _flat_series(h, T, n=257):
    u0 = near_delta(h, Grid1D(2**11, 4 * np.pi))
    t = np.linspace(0, T, n)
    return TimeSeries(t, np.array([sup_norm(flat_halfwave(u0, s)) for s in t]))


def test_single_window_equality():
    h = 2**-6
    ts = _flat_series(h, 0.1)
    rep = glue_windows(ts, T=0.1)
    assert rep.parameters["windows"] == 1
    full, total = rep.constants["full_fourth_power"], rep.constants["windowed_sum"]
    assert abs(full - total) <= 1e-10 * full
    assert len(rep.constants["window_terms"]) == 1


def test_generic_run_bound_holds():
    h = 2**-6
    T = h ** (0.5 - 0.02)
    rep = glue_windows(_flat_series(h, 3.5 * T, 513), 0.02, h=h)
    assert rep.parameters["windows"] == 4
    assert rep.passed
    assert rep.constants["slack"] >= 1.0


def test_glue_needs_a_scale():
    with pytest.raises(ValueError):
        glue_windows(TimeSeries(np.linspace(0, 1, 65), np.ones(65)))


# -- Besov aggregation


def test_besov_single_block():
    assert besov_aggregate({4: 2.0}, 1.0) == pytest.approx(2 ** (4 * 0.875) * 2.0, rel=1e-14)


def test_besov_geometric_oracle():
    s = 0.6
    js = range(0, 40)
    blocks = {j: 2.0 ** (j * (0.125 - s)) * 2.0 ** (-0.1 * j) for j in js}
    ref = np.sqrt((1 - 2.0 ** (-0.2 * 40)) / (1 - 2.0**-0.2))
    assert abs(besov_aggregate(blocks, s) - ref) <= 1e-10


def test_besov_borderline_diverges():
    s = 0.6
    blocks = {j: 2.0 ** (j * (0.125 - s)) for j in range(30)}
    sums = besov_partial_sums(blocks, s)
    assert np.allclose(np.diff(sums), 1.0)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(0, 10), min_size=1, max_size=8),
    st.floats(0.01, 5),
    st.floats(-1, 2),
    st.integers(0, 7),
    st.floats(0, 3),
)
def test_besov_homogeneous_and_monotone(vals, lam, s, k, bump):
    blocks = {j: v for j, v in enumerate(vals)}
    base = besov_aggregate(blocks, s)
    scaled = besov_aggregate({j: lam * v for j, v in blocks.items()}, s)
    assert scaled == pytest.approx(lam * base, rel=1e-12, abs=1e-300)
    k = k % len(vals)
    bigger = dict(blocks)
    bigger[k] += bump
    assert besov_aggregate(bigger, s) >= base


def test_besov_rejects_infinite():
    with pytest.raises(ValueError):
        besov_aggregate({0: np.inf}, 0.5)


# -- reports


def test_verdict_needs_declared_tolerance():
    rep = EstimateReport("x")
    with pytest.raises(KeyError):
        rep.judge("thing", "pass", 1.0)
    rep.declare("thing", "<= 1")
    assert rep.judge("thing", "pass", 0.5).passed


def test_csv_layout_and_determinism(flat_family):
    a = dispersion_fit(flat_family).to_csv()
    b = dispersion_fit(flat_family).to_csv()
    assert a == b
    lines = a.splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    first = lines[1].split(",")
    assert first[0] == "dispersion" and first[1] == "5" and float(first[2]) == 2**-5
