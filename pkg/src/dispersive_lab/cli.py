"""Batch runner: ``dispersive-lab <experiment> [--config PATH] [--out DIR] [--seed N] [--jobs N]``.

Exit status: 0 every verdict passed, 2 configuration error, 3 a regime or
invariant check refused the inputs, 4 some verdict failed, 5 internal error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import platform
import re
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from ._validation import InvariantViolation, RegimeError
from .estimates import CSV_COLUMNS
from .eikonal import semiclassical_regime
from .experiments import (
    COEFFICIENT_KINDS,
    EXPERIMENTS,
    CoefficientSpec,
    ExperimentConfig,
    full_suite_plan,
    run_experiment,
)

log = logging.getLogger("dispersive_lab")

EXIT_OK, EXIT_CONFIG, EXIT_REGIME, EXIT_VERDICT, EXIT_INTERNAL = 0, 2, 3, 4, 5

EXPERIMENT_NAMES = tuple(EXPERIMENTS) + ("full-suite",)

def _length(text: str) -> float:
    """``12.5``, ``256pi``, ``256*pi`` or ``pi``."""
    m = re.fullmatch(r"\s*([0-9.eE+-]*)\s*\*?\s*pi\s*", text)
    if m:
        return (float(m.group(1)) if m.group(1) else 1.0) * np.pi
    return float(text)


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none", "default") else float(text)


#: section -> key -> parser
SCHEMA = {
    "run": {"experiment": str, "output_dir": str, "seed": int, "jobs": int},
    "grid": {"n_points": int, "length": _length},
    "blocks": {"j_min": int, "j_max": int},
    "regime": {"delta": float, "epsilon": _opt_float, "tau0": float, "amplitude_order": int},
    "coefficient": {
        "kind": str,
        "w": float,
        "center": float,
        "width": float,
        "amp": float,
        "speed": float,
        "s": float,
        "seed": int,
    },
}


class ConfigError(ValueError):
    pass


def read_config(path) -> dict:
    """Parse an INI file against :data:`SCHEMA`; any unknown section or key is an error."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            try:
                out[(sec, key)] = SCHEMA[sec][key](raw)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key} = {raw!r}: {exc}") from exc
    return out


def build_config(values: dict, experiment: str | None = None, **overrides) -> ExperimentConfig:
    v = {k: val for (sec, k), val in values.items() if sec != "coefficient"}
    coef = {k: val for (sec, k), val in values.items() if sec == "coefficient"}
    name = experiment or v.pop("experiment", None) or "full-suite"
    v.pop("experiment", None)
    if name not in EXPERIMENT_NAMES:
        raise ConfigError(f"unknown experiment {name!r}")
    spec = None
    if coef:
        kind = coef.setdefault("kind", "bump")
        if kind not in COEFFICIENT_KINDS:
            raise ConfigError(f"unknown coefficient kind {kind!r}")
        spec = CoefficientSpec(**coef)
    for k, val in overrides.items():
        if val is not None:
            v[k] = val
    cfg = ExperimentConfig(experiment=name, coefficient=spec, **v)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig):
    n = cfg.n_points
    if n < 64 or n & (n - 1):
        raise ConfigError(f"n_points = {n} must be a power of two >= 64")
    if not cfg.length > 0:
        raise ConfigError("length must be positive")
    if not 0 <= cfg.delta < 0.5:
        raise ConfigError(f"delta = {cfg.delta} outside [0, 1/2)")
    try:
        semiclassical_regime(cfg.delta, cfg.epsilon)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not 0 < cfg.tau0 <= 1:
        raise ConfigError(f"tau0 = {cfg.tau0} outside (0, 1]")
    if not 1 <= cfg.amplitude_order <= 4:
        raise ConfigError(f"amplitude_order = {cfg.amplitude_order} outside 1..4")
    for k in ("j_min", "j_max"):
        j = getattr(cfg, k)
        if j is not None and not 2 <= j <= 12:
            raise ConfigError(f"{k} = {j} outside 2..12")
    if cfg.j_min is not None and cfg.j_max is not None and cfg.j_max < cfg.j_min:
        raise ConfigError("j_max < j_min")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be at least 1")
    c = cfg.coefficient
    if c is not None:
        if c.width <= 0:
            raise ConfigError("coefficient width must be positive")
        if c.kind == "synthetic-sobolev" and c.s <= 1.5:
            raise ConfigError("synthetic-sobolev needs s > 3/2")


# --------------------------------------------------------------------------
# running


def _run_one(item):
    """Worker entry point; returns ``(name, status, reports, message)``."""
    name, cfg = item
    try:
        reports = run_experiment(name, cfg)
    except (RegimeError, InvariantViolation) as exc:
        return name, "regime", [], f"{type(exc).__name__}: {exc}"
    except Exception:
        return name, "internal", [], traceback.format_exc()
    ok = all(r.passed for r in reports)
    return name, "pass" if ok else "fail", reports, ""


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer, int)) and not isinstance(x, bool):
        return int(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if x is None or isinstance(x, (bool, str)):
        return x
    return str(x)


def _write(outdir: Path, name: str, cfg: ExperimentConfig, status: str, reports, message: str):
    d = outdir / name
    d.mkdir(parents=True, exist_ok=True)
    if reports:
        csv_text = reports[0].to_csv(header=True) + "".join(r.to_csv(header=False) for r in reports[1:])
    else:
        csv_text = ",".join(CSV_COLUMNS) + "\n"
    (d / "samples.csv").write_text(csv_text)
    body = "\n\n".join(r.summary() for r in reports)
    if message:
        body = (body + "\n\n" if body else "") + f"ERROR ({status})\n{message}"
    (d / "summary.txt").write_text(f"experiment {name}: {status.upper()}\n\n{body}\n")
    manifest = {
        "experiment": name,
        "status": status,
        "inputs": _jsonable(asdict(cfg)),
        "seed": cfg.seed,
        "versions": {
            "dispersive_lab": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "tolerances": {r.experiment_id: dict(r.tolerances) for r in reports},
        "verdicts": [
            {"report": r.experiment_id, "name": v.name, "status": v.status, "measured": _jsonable(v.measured)}
            for r in reports
            for v in r.verdicts
        ],
        "parameters": {r.experiment_id: _jsonable(r.parameters) for r in reports},
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def run(cfg: ExperimentConfig, outdir) -> int:
    outdir = Path(outdir)
    plan = full_suite_plan(cfg) if cfg.experiment == "full-suite" else [(cfg.experiment, cfg)]
    if cfg.jobs > 1 and len(plan) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_one, plan))
    else:
        results = [_run_one(item) for item in plan]
    statuses = []
    for (name, c), (_, status, reports, message) in zip(plan, results):
        _write(outdir, name, c, status, reports, message)
        log.info("%s: %s", name, status)
        statuses.append(status)
    if len(plan) > 1:
        lines = [f"{name:32s} {st.upper()}" for (name, _), st in zip(plan, statuses)]
        (outdir / "summary.txt").write_text("\n".join(lines) + "\n")
    if "internal" in statuses:
        return EXIT_INTERNAL
    if "regime" in statuses:
        return EXIT_REGIME
    if "fail" in statuses:
        return EXIT_VERDICT
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dispersive-lab", description=__doc__.splitlines()[0])
    p.add_argument("experiment", choices=EXPERIMENT_NAMES)
    p.add_argument("--config", help="INI file with [run] [grid] [blocks] [regime] [coefficient] sections")
    p.add_argument("--out", help="output directory (default: results, or output_dir from the config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        values = read_config(args.config) if args.config else {}
        cfg = build_config(values, args.experiment, seed=args.seed, jobs=args.jobs, output_dir=args.out)
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        code = run(cfg, cfg.output_dir)
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL
    print(f"{cfg.experiment}: exit {code}; artifacts in {cfg.output_dir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
