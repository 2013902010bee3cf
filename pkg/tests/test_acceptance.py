"""Acceptance run: one line per criterion, at the default desk scale.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or
``python tests/test_acceptance.py``.  Experiments are shared between criteria,
so the first criterion that needs one pays for it.
"""

import functools
import sys

import pytest

from dispersive_lab.cli import run
from dispersive_lab.experiments import ExperimentConfig, full_suite_plan, run_experiment

DEFAULT = ExperimentConfig()


@functools.lru_cache(maxsize=None)
def reports(name):
    plan = dict(full_suite_plan(DEFAULT))
    return {r.experiment_id: r for r in run_experiment(name, plan[name])}


def verdicts(name, report_id=None, names=None):
    out = []
    for rid, rep in reports(name).items():
        if report_id is not None and rid != report_id:
            continue
        out += [(rid, v) for v in rep.verdicts if names is None or any(v.name.startswith(n) for n in names)]
    return out


def line(n, title, vs):
    ok = bool(vs) and all(v.passed for _, v in vs)
    detail = "; ".join(f"{v.name}={_short(v.measured)}" for _, v in vs)
    return ok, f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"


def _short(m):
    if isinstance(m, float):
        return f"{m:.4g}"
    if isinstance(m, (list, tuple)):
        return "[" + ",".join(_short(x) for x in m) + "]"
    return str(m)


def criterion_1():
    return line(1, "Littlewood-Paley reconstruction", verdicts("lp-check"))


def criterion_2():
    return line(2, "flat dispersion exponents", verdicts("dispersion", "dispersion/flat"))


def criterion_3():
    vs = verdicts("kernel", "kernel")
    vs += verdicts("dispersion-bump", names=["decay_constant"])
    vs += verdicts("dispersion-synthetic-sobolev", names=["decay_constant"])
    return line(3, "variable-coefficient kernel and decay constants", vs)


def criterion_4():
    return line(4, "parametrix residual", verdicts("amplitude", names=["residual_"]))


def criterion_5():
    return line(5, "parametrix vs propagator", verdicts("amplitude", names=["reference_"]))


def criterion_6():
    return line(6, "symbol smoothing order", verdicts("smooth-order"))


def criterion_7():
    return line(7, "commutator and composition constants", verdicts("paradiff-check"))


def criterion_8():
    return line(8, "quasilinear eikonal", verdicts("eikonal"))


def criterion_9():
    return line(9, "stationary phase lemma", verdicts("kernel", "stationary-phase"))


def criterion_10():
    return line(10, "refined Van der Corput", verdicts("kernel", "van-der-corput"))


def criterion_11():
    vs = verdicts("dispersion-bump", names=["l2_drift", "adjoint"])
    vs += verdicts("dispersion-synthetic-sobolev", names=["l2_drift", "adjoint"])
    return line(11, "unitarity", vs)


def criterion_12():
    return line(12, "Strichartz ratios", verdicts("strichartz"))


def criterion_13():
    return line(13, "window gluing", verdicts("glue"))


def criterion_14():
    return line(14, "semiclassical expansion", verdicts("expansion"))


def criterion_15(tmp):
    cfg = ExperimentConfig("full-suite", j_min=6, j_max=7)
    codes = [run(cfg, tmp / f"run{i}") for i in (1, 2)]
    names = [n for n, _ in full_suite_plan(cfg)]
    same = [(tmp / "run1" / n / "samples.csv").read_bytes() == (tmp / "run2" / n / "samples.csv").read_bytes() for n in names]
    rows = sum(len((tmp / "run1" / n / "samples.csv").read_bytes().splitlines()) - 1 for n in names)
    ok = all(same) and codes[0] == codes[1] and rows > 0
    return ok, (
        f"criterion 15 {'PASS' if ok else 'FAIL'}  determinism: {sum(same)}/{len(names)} tables byte-identical, "
        f"{rows} rows, exit codes {codes}"
    )


CRITERIA = [globals()[f"criterion_{n}"] for n in range(1, 15)]


@pytest.mark.parametrize("crit", CRITERIA, ids=[f"criterion_{n:02d}" for n in range(1, 15)])
def test_criterion(crit, capsys):
    ok, text = crit()
    with capsys.disabled():
        print("\n" + text)
    assert ok, text


def test_criterion_15_determinism(tmp_path, capsys):
    ok, text = criterion_15(tmp_path)
    with capsys.disabled():
        print("\n" + text)
    assert ok, text


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    results = [c() for c in CRITERIA]
    with tempfile.TemporaryDirectory() as d:
        results.append(criterion_15(Path(d)))
    for _, text in results:
        print(text)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
