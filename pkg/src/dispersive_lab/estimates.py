"""Measurement harness: decay fits, Strichartz norms, window gluing, Besov sums."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.integrate import simpson

from .eikonal import CoefficientField, semiclassical_regime
from .evolution import flat_halfwave, propagate, propagate_inhomogeneous
from .oscillatory import block_parametrix, kernel_profile
from .spectral import CUTOFFS, Field, Grid1D

CSV_COLUMNS = ("experiment_id", "j", "h", "t_or_sigma", "norm_name", "value")
FIT_RESIDUAL_TOL = 0.05
MIN_TIME_SAMPLES = 64


# --------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class Verdict:
    name: str
    status: str  # "pass", "fail" or "inconclusive"
    measured: object
    tolerance: str

    @property
    def passed(self) -> bool:
        return self.status == "pass"


@dataclass(frozen=True)
class Fit:
    slope: float
    stderr: float
    residual: float
    n_samples: int
    intercepts: tuple = ()


@dataclass
class EstimateReport:
    experiment_id: str
    parameters: dict = field(default_factory=dict)
    samples: list = field(default_factory=list)
    fitted_exponents: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)

    def add_sample(self, j, h, t, norm_name, value):
        self.samples.append((int(j), float(h), float(t), str(norm_name), float(value)))

    def declare(self, name: str, tolerance: str):
        """Tolerances are declared before any verdict that uses them."""
        self.tolerances[name] = tolerance

    def judge(self, name: str, status: str, measured) -> Verdict:
        if name not in self.tolerances:
            raise KeyError(f"no tolerance declared for {name!r}")
        v = Verdict(name, status, measured, self.tolerances[name])
        self.verdicts.append(v)
        return v

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def csv_rows(self):
        for j, h, t, name, val in self.samples:
            yield (self.experiment_id, str(j), _fmt(h), _fmt(t), name, _fmt(val))

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(CSV_COLUMNS)
        w.writerows(self.csv_rows())
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"[{self.experiment_id}]"]
        for k, f_ in self.fitted_exponents.items():
            lines.append(f"fit {k} = {f_.slope:.6g} +- {f_.stderr:.2g} (residual {f_.residual:.3g}, n = {f_.n_samples})")
        for k, v in self.constants.items():
            lines.append(f"constant {k} = {_fmt(v) if isinstance(v, float) else v}")
        for v in self.verdicts:
            lines.append(f"{v.status.upper():12s} {v.name}: measured {_show(v.measured)}; tolerance {v.tolerance}")
        return "\n".join(lines)


def _fmt(x: float) -> str:
    return repr(float(x))


def _show(m):
    if isinstance(m, float):
        return f"{m:.6g}"
    if isinstance(m, (list, tuple)):
        return "[" + ", ".join(_show(v) for v in m) + "]"
    return str(m)


def linear_fit(x, y) -> Fit:
    """Least squares ``y = slope x + c`` with the slope's standard error and RMS residual."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    r = y - A @ coef
    n = x.size
    dof = max(n - 2, 1)
    sxx = np.sum((x - x.mean()) ** 2)
    se = float(np.sqrt(np.sum(r**2) / dof / sxx)) if sxx > 0 else float("inf")
    return Fit(float(coef[0]), se, float(np.sqrt(np.mean(r**2))), n, (float(coef[1]),))


def pooled_fit(groups: Sequence[tuple]) -> Fit:
    """Common slope with one intercept per group; groups are ``(x, y)`` pairs."""
    xs = [np.asarray(g[0], float) for g in groups]
    ys = [np.asarray(g[1], float) for g in groups]
    n = sum(x.size for x in xs)
    A = np.zeros((n, 1 + len(xs)))
    y = np.concatenate(ys)
    row = 0
    for i, x in enumerate(xs):
        A[row : row + x.size, 0] = x
        A[row : row + x.size, 1 + i] = 1
        row += x.size
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    r = y - A @ coef
    dof = max(n - A.shape[1], 1)
    sxx = sum(np.sum((x - x.mean()) ** 2) for x in xs)
    se = float(np.sqrt(np.sum(r**2) / dof / sxx)) if sxx > 0 else float("inf")
    return Fit(float(coef[0]), se, float(np.sqrt(np.mean(r**2))), n, tuple(map(float, coef[1:])))


# --------------------------------------------------------------------------
# data


def near_delta(h: float, grid: Grid1D, center: float | None = None) -> Field:
    """``chi(hD) delta_center``: the block wave packet."""
    c = grid.length / 2 if center is None else center
    eta = grid.fft_frequencies
    return Field.from_hat(grid, CUTOFFS.chi(h * eta) * np.exp(-1j * eta * c) / grid.length)


def sup_norm(f: Field) -> float:
    return float(np.max(np.abs(f.values)))


def l1_norm(f: Field) -> float:
    return float(np.sum(np.abs(f.values)) * f.grid.spacing)


def sobolev_h(f: Field, s: float) -> float:
    w = (1 + f.grid.fft_frequencies**2) ** (s / 2)
    return float(np.sqrt(f.grid.length * np.sum(np.abs(w * f.hat) ** 2)))


@dataclass(frozen=True)
class DecaySamples:
    """``sup_x |U(t)|`` on a time grid for one block."""

    j: int
    h: float
    t: np.ndarray
    sup: np.ndarray
    l1: float
    window: tuple
    dt: float = 0.0
    drift: float = 0.0


def dispersion_family(
    js: Iterable[int],
    coeff: CoefficientField | None = None,
    *,
    regime: str = "classical",
    delta: float = 0.1,
    epsilon: float | None = None,
    tau0: float = 0.25,
    length: float = 16 * np.pi,
    n_t: int = 24,
    initial: Callable | None = None,
) -> list:
    """Decay samples for each block.

    The fit window is ``[h^{1/2}, h^{1/2-eps}]`` (semiclassical) or
    ``[h^{1/2}, tau0]`` (classical).  Without a coefficient the flat multiplier
    is applied exactly; otherwise the block equation is propagated.
    """
    out = []
    for j in js:
        h = 2.0**-j
        if regime == "semiclassical":
            _, eps = semiclassical_regime(delta, epsilon)
            hi = h ** (0.5 - eps)
        elif regime == "classical":
            hi = tau0
        else:
            raise ValueError(f"unknown regime {regime!r}")
        lo = np.sqrt(h)
        n = _grid_points(length, h)
        grid = Grid1D(n, length)
        u0 = near_delta(h, grid) if initial is None else initial(h, grid)
        t = np.geomspace(lo, hi, n_t)
        zero = coeff is None or not np.any(coeff.smoothed(h, delta).modes)
        if zero:
            sup = np.array([sup_norm(flat_halfwave(u0, s)) for s in t])
            dt = drift = 0.0
        else:
            run = propagate(u0, coeff, 0.0, hi, h=h, delta=delta, t_record=t)
            sup = np.array([sup_norm(run.state_at(s)) for s in t])
            dt = run.dt
            drift = run.diagnostics["max_drift"]
        out.append(DecaySamples(j, h, t, sup, l1_norm(u0), (lo, hi), dt, drift))
    return out


def _grid_points(length, h):
    """Smallest power of two whose Nyquist frequency reaches ``4/h``."""
    need = 4 / h * length / np.pi
    return int(2 ** max(6, int(np.ceil(np.log2(need - 1e-9)))))


def dispersion_fit(
    family: Sequence[DecaySamples],
    *,
    experiment_id: str = "dispersion",
    t_window: tuple = (-0.55, -0.45),
    h_window: tuple = (-0.30, -0.20),
) -> EstimateReport:
    """Pooled log-log fit of ``sup|U(t)|`` in ``t`` and of the prefactor in ``h``."""
    rep = EstimateReport(experiment_id, {"js": [s.j for s in family], "windows": [s.window for s in family]})
    rep.declare("t_exponent", f"in [{t_window[0]}, {t_window[1]}]")
    rep.declare("h_exponent", f"in [{h_window[0]}, {h_window[1]}]")
    rep.declare("fit_residual", f"<= {FIT_RESIDUAL_TOL} in log-log units")
    groups = []
    for s in family:
        lo, hi = s.window
        keep = (s.t >= lo - 1e-15) & (s.t <= hi + 1e-15)
        if s.dt:
            keep &= (s.t >= lo + s.dt) | (s.t == lo)
        for t, v in zip(s.t, s.sup):
            rep.add_sample(s.j, s.h, t, "sup_norm", v)
        rep.add_sample(s.j, s.h, 0.0, "l1_initial", s.l1)
        groups.append((np.log(s.t[keep]), np.log(s.sup[keep] / s.l1)))
    ft = pooled_fit(groups)
    rep.fitted_exponents["t"] = ft
    hs = np.array([s.h for s in family])
    pref = np.array(ft.intercepts)
    fh = linear_fit(np.log(hs), pref) if len(family) > 1 else Fit(float("nan"), float("nan"), 0.0, 1)
    rep.fitted_exponents["h"] = fh
    rep.constants["prefactors"] = tuple(float(np.exp(p)) for p in pref)
    resid = max(ft.residual, fh.residual)
    if resid > FIT_RESIDUAL_TOL or not np.isfinite(resid):
        status_t = status_h = "inconclusive"
    else:
        status_t = "pass" if t_window[0] <= ft.slope <= t_window[1] else "fail"
        status_h = "pass" if h_window[0] <= fh.slope <= h_window[1] else "fail"
    rep.judge("t_exponent", status_t, ft.slope)
    rep.judge("h_exponent", status_h, fh.slope)
    rep.judge("fit_residual", "pass" if resid <= FIT_RESIDUAL_TOL else "inconclusive", resid)
    return rep


def decay_constants(family: Sequence[DecaySamples]) -> np.ndarray:
    """``max_t sup|U(t)| h^{1/4} t^{1/2} / |u0|_1`` per block."""
    return np.array([np.max(s.sup * s.h**0.25 * np.sqrt(s.t)) / s.l1 for s in family])


def kernel_decay_constants(
    coeff: CoefficientField,
    js: Iterable[int],
    *,
    delta: float = 0.1,
    epsilon: float | None = None,
    M: int = 2,
    z: float = 0.0,
) -> np.ndarray:
    """``max |K(sigma, ., z)| h (sigma/h)^{1/2}`` over ``sigma`` in ``{h^{1/2}, h^{1/4}, 1, h^{-eps}}``."""
    _, eps = semiclassical_regime(delta, epsilon)
    out = []
    for j in js:
        h = 2.0**-j
        sig = np.array([h**0.5, h**0.25, 1.0, h**-eps])
        eik, amp = block_parametrix(coeff, h, delta, sig, M=M)
        fine = Grid1D(_grid_points(coeff.length, h), coeff.length)
        vals = [np.max(np.abs(kernel_profile(eik, amp, s, z, fine).values)) * h * np.sqrt(s / h) for s in sig]
        out.append(max(vals))
    return np.array(out)


# --------------------------------------------------------------------------
# Strichartz


@dataclass(frozen=True)
class TimeSeries:
    """States (or their spatial norms) on a time grid."""

    t: np.ndarray
    values: np.ndarray  # spatial norm at each time


def spatial_norms(states, q: float = np.inf) -> np.ndarray:
    out = []
    for s in states:
        v = np.abs(s.values)
        out.append(np.max(v) if np.isinf(q) else (np.sum(v**q) * s.grid.spacing) ** (1 / q))
    return np.array(out)


def strichartz_norm(run, exponents=(4, np.inf)) -> float:
    """``|u|_{L^p_t L^q_x}`` by composite Simpson in time over the recorded states."""
    p, q = exponents
    if isinstance(run, TimeSeries):
        t, v = run.t, run.values
    else:
        t, v = np.asarray(run.t_grid), spatial_norms(run.states, q)
    if t.size < MIN_TIME_SAMPLES:
        raise ValueError(f"time grid has {t.size} samples; at least {MIN_TIME_SAMPLES} are needed")
    if not np.any(v):
        return 0.0
    return float(simpson(np.asarray(v) ** p, x=t) ** (1 / p))


def graded_times(T: float, n: int = 257, power: float = 4.0) -> np.ndarray:
    """``T (k/n)^power``: dense near 0 where the block packet is still concentrated."""
    return T * (np.arange(n) / (n - 1)) ** power


def strichartz_report(
    js: Iterable[int],
    *,
    delta: float = 0.1,
    epsilon: float | None = None,
    length: float = 4 * np.pi,
    n_t: int = 257,
    factor: float = 4.0,
    inhomogeneous: bool = True,
    experiment_id: str = "strichartz",
) -> EstimateReport:
    """Homogeneous ratio ``|S u0|_{L^4 L^inf} / |u0|_{H^{1/8}}`` and the inhomogeneous
    ratio ``|u|_{L^4 L^inf} h^{1/8} / |f|_{L^1 L^2}`` over ``(0, h^{1/2-eps})``."""
    _, eps = semiclassical_regime(delta, epsilon)
    js = list(js)
    rep = EstimateReport(experiment_id, {"js": js, "epsilon": eps, "length": length, "n_t": n_t})
    rep.declare("homogeneous_stability", f"max/min ratio < {factor}")
    if inhomogeneous:
        rep.declare("inhomogeneous_stability", f"max/min ratio < {factor}")
    hom, inh = [], []
    for j in js:
        h = 2.0**-j
        T = h ** (0.5 - eps)
        grid = Grid1D(_grid_points(length, h), length)
        u0 = near_delta(h, grid)
        t = graded_times(T, n_t)
        sup = np.array([sup_norm(flat_halfwave(u0, s)) for s in t])
        r = strichartz_norm(TimeSeries(t, sup)) / sobolev_h(u0, 0.125)
        hom.append(r)
        rep.add_sample(j, h, T, "strichartz_ratio", r)
        if inhomogeneous:
            r2 = _inhomogeneous_ratio(h, grid, u0, T, n_t)
            inh.append(float(r2))
            rep.add_sample(j, h, T, "inhomogeneous_ratio", r2)
    spread = float(max(hom) / min(hom))
    rep.constants["homogeneous_ratios"] = tuple(hom)
    rep.judge("homogeneous_stability", "pass" if spread < factor else "fail", spread)
    if inhomogeneous:
        spread2 = float(max(inh) / min(inh))
        rep.constants["inhomogeneous_ratios"] = tuple(inh)
        rep.judge("inhomogeneous_stability", "pass" if spread2 < factor else "fail", spread2)
    return rep


def _inhomogeneous_ratio(h, grid, u0, T, n_t):
    """Source ``g(t) u0`` with ``g`` a smooth pulse of length ``h^{3/2}``."""
    width = h**1.5
    g = lambda t: CUTOFFS.phi(2 * (t - width / 2) / width * 2) if t < width else 0.0
    f = lambda t: u0 * float(g(t))
    t = np.unique(np.concatenate([graded_times(T, n_t), [width]]))
    run = propagate_inhomogeneous(f, None, 0.0, T, h=h, grid=grid, t_record=t)
    num = strichartz_norm(run)
    ts = np.linspace(0, width, 401)
    l1l2 = simpson(np.array([abs(g(s)) for s in ts]), x=ts) * float(np.sqrt(np.sum(np.abs(u0.values) ** 2) * grid.spacing))
    return num * h**0.125 / l1l2


# --------------------------------------------------------------------------
# gluing


def window_functions(t: np.ndarray, T: float, tau: float) -> np.ndarray:
    """``phi((t - k T) / T)`` for ``k = 0 .. ceil(tau / T) - 1``; each is 1 on ``[(k-1)T, (k+1)T]``."""
    K = max(1, int(np.ceil(tau / T - 1e-12)))
    return np.stack([CUTOFFS.phi((t - k * T) / T) for k in range(K)])


def glue_windows(run, epsilon: float = 0.02, *, h: float | None = None, T: float | None = None, tol: float = 1e-6):
    """Compare ``|u|^4_{L^4 L^inf}`` on ``[0, tau]`` with ``sum_k |phi_k u|^4_{L^4 L^inf}``."""
    if isinstance(run, TimeSeries):
        t, v = run.t, run.values
        hh = h
    else:
        t, v = np.asarray(run.t_grid), spatial_norms(run.states)
        hh = run.h if h is None else h
    if T is None:
        if hh is None:
            raise ValueError("need h or T to size the windows")
        T = hh ** (0.5 - epsilon)
    tau = float(t[-1] - t[0])
    win = window_functions(t - t[0], T, tau)
    full = float(simpson(v**4, x=t))
    parts = np.array([simpson((w * v) ** 4, x=t) for w in win])
    total = float(parts.sum())
    rep = EstimateReport("glue", {"epsilon": epsilon, "T": T, "tau": tau, "windows": int(win.shape[0])})
    rep.declare("glued_bound", f"full <= windowed sum + {tol:g} (relative)")
    rep.constants["full_fourth_power"] = full
    rep.constants["windowed_sum"] = total
    rep.constants["slack"] = total / full if full > 0 else 1.0
    rep.constants["window_terms"] = tuple(map(float, parts))
    ok = full <= total + tol * max(full, 1e-300)
    rep.judge("glued_bound", "pass" if ok else "fail", full - total)
    j = 0 if hh is None else int(round(-np.log2(hh)))
    rep.add_sample(j, hh or 0.0, tau, "l4linf_fourth_full", full)
    rep.add_sample(j, hh or 0.0, tau, "l4linf_fourth_windowed", total)
    return rep


# --------------------------------------------------------------------------
# Besov aggregation


def besov_aggregate(block_norms: dict, s_target: float) -> float:
    """``(sum_j 2^{2 j (s - 1/8)} value_j^2)^{1/2}``."""
    js = np.array(sorted(block_norms), dtype=float)
    v = np.array([block_norms[int(j)] for j in js], dtype=float)
    if np.any(~np.isfinite(v)):
        raise ValueError("block norms must be finite")
    return float(np.sqrt(np.sum(2.0 ** (2 * js * (s_target - 0.125)) * v**2)))


def besov_partial_sums(block_norms: dict, s_target: float) -> np.ndarray:
    """Squared partial sums; linear growth in the block count signals divergence."""
    js = sorted(block_norms)
    terms = [2.0 ** (2 * j * (s_target - 0.125)) * block_norms[j] ** 2 for j in js]
    return np.cumsum(terms)
