#!/usr/bin/env python3
"""
Coupling Experiments Command Line
Parses a sectioned key-value config, runs one experiment and writes its
CSV report, metadata sidecar and optional SVG plot.

Usage:
    python coupling_cli.py --config configs/verify_main.cfg [--seed N] [--threads N] [--out DIR]

Exit status: 0 when every configured acceptance threshold was met, 1 when a
threshold failed, 2 when the run raised an error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import traceback
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from brownian_coupling import MirrorGeometry, TimeGrid, survival_curve, total_variation_distance
from fki_semigroup import (INITIAL_FUNCTIONS, InitialFunction, SemigroupQuery, check_eigenfunction, eigen_residual,
                           evaluate)
from kato_class import kato_membership_probe, magnetic_integrands, potential_integrand
from magnetic_action import FieldSpec
from potentials import FIELD_BUILDERS, build_field
from verify_theorems import (ExperimentReport, PairSet, nase_residual_experiment, smoothing_experiment,
                             theorem_main_experiment)
from visualization import plot_report

logger = logging.getLogger("coupling_cli")

COMMANDS = ("simulate-coupling", "kato", "semigroup", "verify-main", "verify-smoothing", "verify-nase",
            "eigen-check")
REQUIRED_SECTIONS = ("run", "field", "mc")
REQUIRED_KEYS = {"run": ("command",), "field": ("name",), "mc": ("n_paths",)}
FLOAT_FORMAT = "%.17g"
KATO_INTEGRANDS = ("potential", "magnetic", "divergence")

# section -> key -> value kind
SCHEMA: Dict[str, Dict[str, str]] = {
    "run": {"command": "str", "seed": "int", "threads": "int", "out": "str", "svg": "bool", "c0": "float"},
    "field": {"name": "str", "dim": "int", "amplitude": "float", "radius": "float", "center": "floats",
              "B": "float", "value": "float", "vector": "floats", "electrons": "int", "nuclei": "vectors",
              "charges": "floats", "clamp": "float", "a_clamp": "float"},
    "mc": {"n_paths": "int", "t_end": "float", "dt": "float", "n_steps": "int"},
    "experiment": {"beta": "float", "q": "float", "points": "vectors", "x": "floats", "y": "floats",
                   "deltas": "floats", "t_list": "floats", "dt_ladder": "floats", "alpha": "float",
                   "t_ladder": "floats", "psi": "str", "psi_param": "float", "axis": "int", "energy": "float",
                   "base_points": "vectors", "delta0": "float", "n_scales": "int", "ratio": "float",
                   "centered": "bool", "closed_form": "str", "candidates": "vectors", "direction": "floats",
                   "n_pairs": "int", "n_times": "int", "integrand": "str", "n_boot": "int"},
    "accept": {"n_sigma": "float", "min_delta_slope": "float", "max_ratio": "float", "slope_target": "float",
               "slope_tol": "float", "max_residual": "float", "max_rel_error": "float", "expected": "float",
               "rel_tol": "float"},
}


class ConfigError(ValueError):
    """Config parse or validation failure; the message starts with the offending line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class RunConfig:
    command: str
    field_name: str
    n_paths: int
    field_params: Dict[str, Any] = field(default_factory=dict)
    t_end: float = 1.0
    dt: float = 1e-3
    n_steps: Optional[int] = None
    seed: int = 0
    threads: Optional[int] = None
    out: str = "results"
    svg: bool = False
    c0: float = 1.0
    beta: Optional[float] = None
    q: Optional[float] = None
    experiment: Dict[str, Any] = field(default_factory=dict)
    accept: Dict[str, Any] = field(default_factory=dict)
    text: str = field(default="", repr=False)

    @property
    def q_value(self) -> Optional[float]:
        """q as given, or derived from beta as 1/(1 - beta)."""
        if self.q is not None:
            return self.q
        if self.beta is not None:
            return 1.0 / (1.0 - self.beta)
        return None

    @property
    def beta_value(self) -> Optional[float]:
        if self.beta is not None:
            return self.beta
        if self.q is not None:
            return 1.0 - 1.0 / self.q
        return None

    @property
    def grid(self) -> TimeGrid:
        if self.n_steps is not None:
            return TimeGrid(self.t_end, self.n_steps)
        return TimeGrid.from_dt(self.t_end, self.dt)


@dataclass
class RunResult:
    status: int
    summary: str
    report: ExperimentReport
    files: Dict[str, str] = field(default_factory=dict)


def _convert(kind: str, raw: str, key: str, line: int):
    try:
        if kind == "str":
            return raw
        if kind == "bool":
            lowered = raw.lower()
            if lowered not in ("true", "false"):
                raise ConfigError(line, f"'{key}' must be true or false, got '{raw}'")
            return lowered == "true"
        if kind == "int":
            value = float(raw)
            if not value.is_integer():
                raise ConfigError(line, f"'{key}' must be an integer, got '{raw}'")
            return int(value)
        if kind == "float":
            return float(raw)
        if kind == "floats":
            return tuple(float(v) for v in raw.split(","))
        if kind == "vectors":
            return tuple(tuple(float(v) for v in part.split(",")) for part in raw.split(";"))
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(line, f"malformed number in '{key} = {raw}'") from None
    raise ConfigError(line, f"unsupported value kind {kind}")


def _read_sections(text: str) -> Tuple[Dict[str, Dict[str, Any]], Dict[Tuple[str, str], int], Dict[str, int]]:
    sections: Dict[str, Dict[str, Any]] = {}
    key_lines: Dict[Tuple[str, str], int] = {}
    section_lines: Dict[str, int] = {}
    current = None
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(number, f"malformed section header '{line}'")
            current = line[1:-1].strip()
            if current not in SCHEMA:
                raise ConfigError(number, f"unknown section [{current}], expected one of {sorted(SCHEMA)}")
            if current in sections:
                raise ConfigError(number, f"duplicate section [{current}]")
            sections[current] = {}
            section_lines[current] = number
            continue
        if "=" not in line:
            raise ConfigError(number, f"expected 'key = value', got '{line}'")
        if current is None:
            raise ConfigError(number, "key outside of any section")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA[current]:
            raise ConfigError(number, f"unknown key '{key}' in [{current}]")
        if key in sections[current]:
            raise ConfigError(number, f"duplicate key '{key}' in [{current}]")
        if not raw:
            raise ConfigError(number, f"'{key}' has no value")
        sections[current][key] = _convert(SCHEMA[current][key], raw, key, number)
        key_lines[(current, key)] = number
    return sections, key_lines, section_lines


def parse_config(text: str) -> RunConfig:
    """
    Parse and validate a run config

    Parameters:
    text: config file contents ([section] headers, key = value lines, # comments)

    Returns:
    RunConfig with defaults filled in
    """
    sections, key_lines, section_lines = _read_sections(text)
    last_line = max(len(text.splitlines()), 1)
    for name in REQUIRED_SECTIONS:
        if name not in sections:
            raise ConfigError(last_line, f"missing required section [{name}]")
        for key in REQUIRED_KEYS[name]:
            if key not in sections[name]:
                raise ConfigError(section_lines[name], f"missing required key '{key}' in [{name}]")

    run, field_section, mc = sections["run"], dict(sections["field"]), sections["mc"]
    experiment, accept = dict(sections.get("experiment", {})), sections.get("accept", {})

    def where(section, key):
        return key_lines.get((section, key), section_lines.get(section, last_line))

    if run["command"] not in COMMANDS:
        raise ConfigError(where("run", "command"), f"unknown command '{run['command']}', expected one of {COMMANDS}")
    field_name = field_section.pop("name")
    if field_name not in FIELD_BUILDERS:
        raise ConfigError(where("field", "name"),
                          f"unknown field '{field_name}', expected one of {sorted(FIELD_BUILDERS)}")
    beta, q = experiment.pop("beta", None), experiment.pop("q", None)
    if beta is not None and q is not None:
        raise ConfigError(where("experiment", "q"), "specify exactly one of beta and q, q = 1/(1-beta) is derived")
    if beta is not None and not 0.0 < beta < 1.0:
        raise ConfigError(where("experiment", "beta"), f"β must lie in (0,1), got {beta}")
    if q is not None and not q > 1.0:
        raise ConfigError(where("experiment", "q"), f"q must exceed 1, got {q}")
    if mc["n_paths"] < 2:
        raise ConfigError(where("mc", "n_paths"), f"n_paths must be at least 2, got {mc['n_paths']}")
    for key in ("t_end", "dt"):
        if key in mc and not mc[key] > 0:
            raise ConfigError(where("mc", key), f"{key} must be positive, got {mc[key]}")
    if "n_steps" in mc and mc["n_steps"] < 1:
        raise ConfigError(where("mc", "n_steps"), f"n_steps must be positive, got {mc['n_steps']}")
    if run.get("threads") is not None and run["threads"] < 1:
        raise ConfigError(where("run", "threads"), f"threads must be positive, got {run['threads']}")
    psi = experiment.get("psi")
    if psi is not None and psi not in INITIAL_FUNCTIONS:
        raise ConfigError(where("experiment", "psi"),
                          f"unknown initial function '{psi}', expected one of {sorted(INITIAL_FUNCTIONS)}")
    if experiment.get("integrand", "potential") not in KATO_INTEGRANDS:
        raise ConfigError(where("experiment", "integrand"),
                          f"unknown integrand '{experiment['integrand']}', expected one of {KATO_INTEGRANDS}")
    if experiment.get("closed_form", "auto") not in ("auto", "true", "false"):
        raise ConfigError(where("experiment", "closed_form"), "closed_form must be auto, true or false")

    return RunConfig(
        command=run["command"],
        field_name=field_name,
        n_paths=mc["n_paths"],
        field_params=field_section,
        t_end=mc.get("t_end", 1.0),
        dt=mc.get("dt", 1e-3),
        n_steps=mc.get("n_steps"),
        seed=run.get("seed", 0),
        threads=run.get("threads"),
        out=run.get("out", "results"),
        svg=run.get("svg", False),
        c0=run.get("c0", 1.0),
        beta=beta,
        q=q,
        experiment=experiment,
        accept=dict(accept),
        text=text,
    )


def build_run_field(config: RunConfig) -> FieldSpec:
    """The configured field; Coulomb potentials are clamped at dt^(-1/2) unless a clamp is given."""
    params = dict(config.field_params)
    if config.field_name == "coulomb" and "clamp" not in params:
        params["clamp"] = config.grid.dt ** -0.5
    return build_field(config.field_name, params)


def _build_psi(config: RunConfig, field: FieldSpec, default: str) -> InitialFunction:
    name = config.experiment.get("psi", default)
    param = config.experiment.get("psi_param")
    axis = config.experiment.get("axis", 0)
    if name in ("half_space", "ramp"):
        return INITIAL_FUNCTIONS[name](axis) if param is None else INITIAL_FUNCTIONS[name](axis, param)
    if name == "landau" and param is None:
        param = field.params.get("B", 1.0)
    return INITIAL_FUNCTIONS[name]() if param is None else INITIAL_FUNCTIONS[name](param)


def _pair_points(config: RunConfig, dim: int) -> Tuple[np.ndarray, np.ndarray]:
    e1 = np.eye(dim)[0]
    x = np.asarray(config.experiment.get("x", 0.5 * e1), dtype=np.float64)
    y = np.asarray(config.experiment.get("y", -0.5 * e1), dtype=np.float64)
    return x, y


def _points(config: RunConfig, dim: int) -> np.ndarray:
    return np.array(config.experiment.get("points", (tuple(np.zeros(dim)),)), dtype=np.float64)


def _grid_header(config: RunConfig) -> Dict[str, Any]:
    grid = config.grid
    return {"seed": config.seed, "t_end": grid.t_end, "n_steps": grid.n_steps, "dt": grid.dt,
            "n_paths": config.n_paths, "field": config.field_name, "field_params": config.field_params}


def _run_simulate_coupling(config, field, workers):
    x, y = _pair_points(config, field.dim)
    geom = MirrorGeometry(x, y)
    table = survival_curve(geom, config.grid, config.n_paths, config.seed, config.experiment.get("n_times", 5),
                           workers)
    table["tv_distance"] = [total_variation_distance(t, x, y) for t in table["t"]]
    header = {**_grid_header(config), "experiment": "simulate-coupling", "x": x.tolist(), "y": y.tolist(),
              "clamps": 0, "inequality": "P(tau > t) = erf(|x-y| / (2 sqrt(2t))) <= |x-y| / sqrt(2 pi t)"}
    max_z = float(table["z_score"].abs().max())
    passed = bool((table["exact"] <= table["bound"] + 1e-15).all())
    if "n_sigma" in config.accept:
        passed = passed and max_z <= config.accept["n_sigma"]
    fits = {"max_abs_z": max_z}
    return ExperimentReport(table, header, fits), passed, f"max |z| = {max_z:.2f} over {len(table)} times"


def _kato_integrand(config, field):
    which = config.experiment.get("integrand", "potential")
    if which == "potential":
        return potential_integrand(field)
    a_part, div_part = magnetic_integrands(field, config.q_value or 2.0)
    return a_part if which == "magnetic" else div_part


def _run_kato(config, field, workers):
    f = _kato_integrand(config, field)
    alpha = config.experiment.get("alpha", 0.0)
    ladder = config.experiment.get("t_ladder", (1.0, 0.5, 0.25, 0.125))
    probe = kato_membership_probe(f, alpha, ladder, config.experiment.get("candidates"))
    rows = []
    for t, kv in zip(probe.t_ladder, probe.values):
        row = {"t": t, "value": kv.value, "error_estimate": kv.error_estimate}
        row.update({f"maximizer_{i + 1}": v for i, v in enumerate(kv.maximizer)})
        rows.append(row)
    table = pd.DataFrame(rows)
    header = {**_grid_header(config), "experiment": "kato", "integrand": f.label, "alpha": alpha,
              "clamps": 0, "inequality": "sup_z int_0^t s^(-alpha/2) E_z|f(B_s)| ds -> 0 as t -> 0"}
    fits = {"decay_exponent": probe.decay_exponent, "passes": probe.passes}
    head = probe.values[0].value
    passed = True
    if "expected" in config.accept:
        expected = config.accept["expected"]
        rel = abs(head - expected) / abs(expected)
        fits["rel_error"] = rel
        passed = rel <= config.accept.get("max_rel_error", 0.01)
    return (ExperimentReport(table, header, fits), passed,
            f"Kato functional alpha={alpha:g} t={probe.t_ladder[0]:g}: {head:.6g} (decay exponent "
            f"{probe.decay_exponent:.3f})")


def _run_semigroup(config, field, workers):
    psi = _build_psi(config, field, "gaussian")
    grid = config.grid
    points = _points(config, field.dim)
    query = SemigroupQuery(field, grid.t_end, points, psi, config.n_paths, grid, config.seed, workers)
    estimates = evaluate(query)
    free = not field.has_vector_potential and field.divergence is None and not field.has_potential
    rows = []
    for x, est in zip(query.points, estimates):
        row = {f"x{i + 1}": v for i, v in enumerate(x)}
        row.update({"value_re": float(np.real(est.mean)), "value_im": float(np.imag(est.mean)),
                    "std_error": est.std_error, "clamps": est.clamps})
        if free and psi.heat_flow is not None:
            row["exact"] = float(psi.heat_flow(grid.t_end, x)[0])
        rows.append(row)
    table = pd.DataFrame(rows)
    header = {**_grid_header(config), "experiment": "semigroup", "psi": psi.name,
              "clamps": int(table["clamps"].sum()),
              "inequality": "exp(-tH(A,V)) Psi(x) = E[exp(-S_t(A|Z) - int_0^t V(Z_s) ds) Psi(Z_t)]"}
    passed = True
    fits: Dict[str, Any] = {}
    if "exact" in table:
        z = (table["value_re"] - table["exact"]).abs() / table["std_error"].where(table["std_error"] > 0, np.inf)
        fits["max_abs_z"] = float(z.max())
        if "n_sigma" in config.accept:
            passed = fits["max_abs_z"] <= config.accept["n_sigma"]
    values = ", ".join(f"{v:.5g}±{s:.2g}" for v, s in zip(table["value_re"], table["std_error"]))
    return ExperimentReport(table, header, fits), passed, f"semigroup values: {values}"


def _run_verify_main(config, field, workers):
    q = config.q_value or 2.0
    report = theorem_main_experiment(field, config.experiment.get("t_list", (config.t_end,)),
                                     config.experiment.get("deltas", (0.05, 0.1, 0.2, 0.4)), q, config.n_paths,
                                     config.grid.dt, config.seed, config.c0, workers,
                                     direction=config.experiment.get("direction"))
    slopes = report.fits["delta_exponent"]
    passed = True
    if "min_delta_slope" in config.accept:
        passed = bool(slopes) and all(s >= config.accept["min_delta_slope"] for s in slopes.values())
    if "max_ratio" in config.accept:
        passed = passed and bool((report.table["ratio"] <= config.accept["max_ratio"]).all())
    text = ", ".join(f"t={t:g}: {s:.3f}" for t, s in slopes.items()) or "n/a"
    return report, passed, f"delta exponent ({text}), target {report.fits['target_delta_exponent']:.3f}"


def _run_verify_smoothing(config, field, workers):
    beta = config.beta_value
    if beta is None:
        raise ValueError("verify-smoothing needs beta (or q) in [experiment]")
    psi = _build_psi(config, field, "half_space")
    base = config.experiment.get("base_points", (tuple(np.zeros(field.dim)),))
    pairset = PairSet.geometric(base, config.experiment.get("delta0", 4.0), config.experiment.get("n_scales", 10),
                                config.experiment.get("ratio", 2.0), config.experiment.get("direction"),
                                config.experiment.get("centered", True))
    closed_form = {"auto": None, "true": True, "false": False}[config.experiment.get("closed_form", "auto")]
    report = smoothing_experiment(field, psi, beta, config.experiment.get("t_list", (0.125, 0.25, 0.5, 1.0)),
                                  pairset, config.n_paths, config.grid.dt, config.seed, closed_form,
                                  config.experiment.get("n_boot", 200), workers)
    report.header = {**_grid_header(config), **report.header}
    slope = report.fits.get("t_slope", math.nan)
    target = config.accept.get("slope_target", report.fits["target_t_slope"])
    passed = True
    if "slope_tol" in config.accept:
        passed = abs(slope - target) <= config.accept["slope_tol"]
    return report, passed, f"seminorm t-slope {slope:.3f}, target {target:.3f}"


def _run_verify_nase(config, field, workers):
    x, y = _pair_points(config, field.dim)
    report = nase_residual_experiment(field, MirrorGeometry(x, y),
                                      config.experiment.get("dt_ladder", (1e-2, 1e-3, 1e-4)),
                                      config.experiment.get("n_pairs", config.n_paths), config.seed, config.t_end,
                                      workers)
    final = report.fits["final_residual_ms"]
    passed = True
    if "max_residual" in config.accept:
        passed = report.fits["monotone"] and final < config.accept["max_residual"]
    return report, passed, f"final mean-square residual {final:.3g} (monotone: {report.fits['monotone']})"


def _run_eigen_check(config, field, workers):
    psi = _build_psi(config, field, "landau")
    energy = config.experiment.get("energy")
    if energy is None:
        if "B" not in field.params:
            raise ValueError("eigen-check needs 'energy' in [experiment] for this field")
        energy = 0.5 * abs(field.params["B"])
    grid = config.grid
    points = _points(config, field.dim)
    fd_rel, fd_ok = check_eigenfunction(field, psi, energy, points, rel_tol=config.accept.get("rel_tol", 1e-4))
    if not fd_ok:
        logger.warning("finite-difference check of H psi = %g psi failed: relative residual %.3g", energy, fd_rel)
    residuals = eigen_residual(field, psi, energy, grid.t_end, points, config.n_paths, grid, config.seed, workers)
    expected = np.exp(-grid.t_end * energy) * psi(points)
    rows = []
    for x, est, target in zip(points, residuals, expected):
        row = {f"x{i + 1}": v for i, v in enumerate(x)}
        row.update({"residual": est.mean, "std_error": est.std_error, "expected": float(np.real(target)),
                    "rel_error": est.mean / abs(target), "clamps": est.clamps})
        rows.append(row)
    table = pd.DataFrame(rows)
    header = {**_grid_header(config), "experiment": "eigen-check", "psi": psi.name, "energy": energy,
              "clamps": int(table["clamps"].sum()), "inequality": "exp(-tH) Psi = exp(-t E) Psi"}
    fits = {"finite_difference_rel_residual": fd_rel, "finite_difference_passed": fd_ok}
    passed = fd_ok
    if "n_sigma" in config.accept:
        passed = passed and bool((table["residual"] <= config.accept["n_sigma"] * table["std_error"] + 1e-12).all())
    if "max_rel_error" in config.accept:
        passed = passed and bool((table["rel_error"] < config.accept["max_rel_error"]).all())
    text = ", ".join(f"{r:.3g}±{s:.2g}" for r, s in zip(table["residual"], table["std_error"]))
    return ExperimentReport(table, header, fits), passed, f"eigen residuals: {text}"


RUNNERS = {
    "simulate-coupling": _run_simulate_coupling,
    "kato": _run_kato,
    "semigroup": _run_semigroup,
    "verify-main": _run_verify_main,
    "verify-smoothing": _run_verify_smoothing,
    "verify-nase": _run_verify_nase,
    "eigen-check": _run_eigen_check,
}


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)


def _stem(outdir: str, command: str) -> str:
    timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
    stem = os.path.join(outdir, f"{command}-{timestamp}")
    suffix = 1
    while os.path.exists(stem + ".csv"):
        stem = os.path.join(outdir, f"{command}-{timestamp}_{suffix}")
        suffix += 1
    return stem


def write_report(report: ExperimentReport, command: str, outdir: str, svg: bool = False,
                 config_text: str = "") -> Dict[str, str]:
    """
    Write a report as CSV plus a JSON metadata sidecar, and optionally an SVG plot

    Returns:
    dict of written file paths keyed by 'csv', 'meta', 'pairs' and 'svg'
    """
    os.makedirs(outdir, exist_ok=True)
    stem = _stem(outdir, command)
    files = {"csv": stem + ".csv", "meta": stem + ".meta.json"}
    report.table.to_csv(files["csv"], index=False, float_format=FLOAT_FORMAT)
    if report.cells is not None:
        files["pairs"] = stem + "-pairs.csv"
        report.cells.to_csv(files["pairs"], index=False, float_format=FLOAT_FORMAT)
    meta = {"command": command, "header": report.header, "fits": report.fits, "config": config_text}
    with open(files["meta"], "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True, default=_json_default)
    if svg:
        files["svg"] = plot_report(command, report.table, report.fits, stem + ".svg")
    return files


def read_report(path: str) -> pd.DataFrame:
    """Read a report CSV back with exact float round-trip."""
    return pd.read_csv(path, float_precision="round_trip")


def run(config: RunConfig) -> RunResult:
    """
    Execute the configured command and write its artifacts

    Parameters:
    config: validated RunConfig

    Returns:
    RunResult with exit status 0 (thresholds met) or 1 (a threshold failed)
    """
    logger.info("running %s on field %s (seed %d, %d paths)", config.command, config.field_name, config.seed,
                config.n_paths)
    field = build_run_field(config)
    report, passed, headline = RUNNERS[config.command](config, field, config.threads)
    files = write_report(report, config.command, config.out, config.svg, config.text)
    status = 0 if passed else 1
    glyph = "✅" if passed else "❌"
    clamps = report.header.get("clamps", 0)
    if clamps and passed:
        glyph = "⚠️"
    summary = f"{glyph} {config.command}: {headline} [clamps: {clamps}] -> {os.path.basename(files['csv'])}"
    logger.info(summary)
    return RunResult(status, summary, report, files)


def _attach_log_file(outdir: str) -> logging.Handler:
    os.makedirs(outdir, exist_ok=True)
    handler = logging.FileHandler(os.path.join(outdir, "run.log"))
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    handler.setLevel(logging.INFO)
    root = logging.getLogger()
    root.addHandler(handler)
    if root.level > logging.INFO or root.level == logging.NOTSET:
        root.setLevel(logging.INFO)
    return handler


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Mirror coupling and Feynman-Kac-Ito experiments")
    parser.add_argument("--config", required=True, help="path to the run config")
    parser.add_argument("--seed", type=int, help="override [run] seed")
    parser.add_argument("--threads", type=int, help="override [run] threads")
    parser.add_argument("--out", help="override [run] out directory")
    return parser


def _write_error(outdir: str, command: str) -> str:
    os.makedirs(outdir, exist_ok=True)
    path = _stem(outdir, command) + ".error.txt"
    with open(path, "w") as f:
        f.write(traceback.format_exc())
    return path


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    outdir = args.out or "results"
    command = "config"
    handler = None
    try:
        with open(args.config) as f:
            config = parse_config(f.read())
        overrides = {k: v for k, v in (("seed", args.seed), ("threads", args.threads), ("out", args.out))
                     if v is not None}
        config = dataclasses.replace(config, **overrides)
        outdir, command = config.out, config.command
        handler = _attach_log_file(outdir)
        result = run(config)
        print(result.summary)
        return result.status
    except Exception as e:
        if handler is None:
            handler = _attach_log_file(outdir)
        path = _write_error(outdir, command)
        logger.exception("%s failed", command)
        print(f"❌ {command} failed: {e} (details in {path})")
        return 2
    finally:
        if handler is not None:
            logging.getLogger().removeHandler(handler)
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
