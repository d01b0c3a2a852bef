"""
Verification Experiments Module
Turns the coupling estimate, the Holder smoothing bound and the coupled
action identity into desk-scale numerical checks: Holder exponent fits,
the coupling-inequality scan, the seminorm t-scaling and the dt-refinement
ladder of the action decomposition residual.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from brownian_coupling import (MirrorGeometry, RngStream, TimeGrid, block_size_for, cell_seed, couple_block,
                               map_path_blocks, paths_from_increments)
from fki_semigroup import InitialFunction, coupling_lhs, coupling_rhs, evaluate_pair_difference
from kato_class import KatoQuery
from magnetic_action import FieldSpec, decompose_block

logger = logging.getLogger(__name__)

MIN_SCALES = 4
COUPLING_INEQUALITY = ("E|exp(-S_t(A|X)) - exp(-S_t(A|Y))| <= c0 C(A,t,q) t^(-1/(2q*)) |x-y|^(1/q*)")
SMOOTHING_INEQUALITY = ("||exp(-rH(A,0))||_{L^inf -> C^{0,beta}} <= c0 C(A,r,1/(1-beta)) r^(-beta/2) "
                        "+ c0 r^(-beta/2)")
DECOMPOSITION_IDENTITY = "S_t(X) - S_t(Y) = M_t + I_t almost surely"


@dataclass(frozen=True)
class PairSet:
    """
    Point pairs for empirical Holder seminorms.

    Pairs are (b, b + delta * direction) for every base point b and distance
    delta, or (b - delta/2 direction, b + delta/2 direction) when centered.
    """

    base_points: np.ndarray
    direction: np.ndarray
    distances: tuple
    centered: bool = False

    def __post_init__(self):
        base = np.atleast_2d(np.asarray(self.base_points, dtype=np.float64))
        direction = np.asarray(self.direction, dtype=np.float64)
        if direction.shape != (base.shape[1],):
            raise ValueError(f"direction must lie in R^{base.shape[1]}, got shape {direction.shape}")
        norm = np.linalg.norm(direction)
        if norm == 0:
            raise ValueError("direction must be non-zero")
        distances = tuple(float(d) for d in self.distances)
        if any(not d > 0 for d in distances):
            raise ValueError(f"all distances must be positive, got {distances}")
        if len(set(distances)) < MIN_SCALES:
            raise ValueError(f"need at least {MIN_SCALES} distinct distance scales, got {len(set(distances))}")
        object.__setattr__(self, "base_points", base)
        object.__setattr__(self, "direction", direction / norm)
        object.__setattr__(self, "distances", distances)

    @classmethod
    def geometric(cls, base_points, delta0: float, n_scales: int, ratio: float = 2.0, direction=None,
                  centered: bool = False) -> "PairSet":
        """Distances delta0 * ratio^-j for j = 0..n_scales-1."""
        if not ratio > 1:
            raise ValueError(f"ratio must exceed 1, got {ratio}")
        base = np.atleast_2d(np.asarray(base_points, dtype=np.float64))
        if direction is None:
            direction = np.eye(base.shape[1])[0]
        return cls(base, direction, tuple(delta0 * ratio ** -j for j in range(n_scales)), centered)

    @property
    def dim(self) -> int:
        return self.base_points.shape[1]

    def pairs(self) -> List[tuple]:
        """(base index, x, y, delta) in base-major, distance-minor order."""
        out = []
        for i, b in enumerate(self.base_points):
            for delta in self.distances:
                if self.centered:
                    out.append((i, b - 0.5 * delta * self.direction, b + 0.5 * delta * self.direction, delta))
                else:
                    out.append((i, b, b + delta * self.direction, delta))
        return out

    @property
    def pair_distances(self) -> np.ndarray:
        return np.array([p[3] for p in self.pairs()])

    @property
    def diameter(self) -> float:
        return max(self.distances)


@dataclass(frozen=True)
class HolderFit:
    beta_hat: float
    c_hat: float
    r2: float
    ci_low: float
    ci_high: float
    excluded: int
    quotient_max: float
    n_scales: int
    beta: Optional[float] = None


@dataclass
class ExperimentReport:
    """Result table plus everything needed to re-run it."""

    table: pd.DataFrame
    header: Dict[str, Any]
    fits: Dict[str, Any] = field(default_factory=dict)
    cells: Optional[pd.DataFrame] = None


def _loglog_fit(x, y):
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def holder_fit(pairset: PairSet, differences, beta: Optional[float] = None, n_boot: int = 200,
               seed: int = 0) -> HolderFit:
    """
    Least-squares fit of log|f(x) - f(y)| against log|x - y|.

    Parameters:
    pairset: PairSet the differences were measured on
    differences: f(x) - f(y) per pair, in pairset.pairs() order
    beta: exponent for the reported max quotient (defaults to the fitted one)
    n_boot: bootstrap resamples over pairs for the confidence interval
    seed: bootstrap seed

    Returns:
    HolderFit with beta_hat = slope and c_hat = exp(intercept)
    """
    diffs = np.abs(np.asarray(differences, dtype=np.float64))
    deltas = pairset.pair_distances
    if diffs.shape != deltas.shape:
        raise ValueError(f"expected {deltas.size} differences, got {diffs.size}")
    if not np.all(np.isfinite(diffs)):
        raise ValueError("pair differences must be finite")
    usable = diffs > 0
    excluded = int((~usable).sum())
    n_scales = len(set(deltas[usable].tolist()))
    if n_scales < MIN_SCALES:
        raise ValueError(f"only {n_scales} usable distance scales ({excluded} zero differences excluded), "
                         f"need {MIN_SCALES}")
    x, y = deltas[usable], diffs[usable]
    slope, intercept, r2 = _loglog_fit(x, y)

    rng = np.random.default_rng(seed)
    boot = []
    for _ in range(n_boot):
        idx = rng.integers(0, x.size, x.size)
        if np.unique(x[idx]).size < 2:
            continue
        boot.append(np.polyfit(np.log(x[idx]), np.log(y[idx]), 1)[0])
    ci_low, ci_high = (np.percentile(boot, [2.5, 97.5]) if boot else (slope, slope))
    b = slope if beta is None else beta
    quotient_max = float(np.max(diffs / deltas ** b))
    return HolderFit(slope, math.exp(intercept), r2, float(ci_low), float(ci_high), excluded, quotient_max,
                     n_scales, beta)


def _field_center(field: FieldSpec) -> np.ndarray:
    return np.asarray(field.params.get("center", np.zeros(field.dim)), dtype=np.float64)


def theorem_main_experiment(field: FieldSpec, t_list: Sequence[float], delta_list: Sequence[float], q: float,
                            n_paths: int, dt: float, seed: int, c0: float = 1.0, workers: Optional[int] = None,
                            kato_query: Optional[KatoQuery] = None, center=None, direction=None) -> ExperimentReport:
    """
    Scan the coupling estimate over (t, delta) cells.

    Each cell couples x = center + delta/2 u and y = center - delta/2 u and
    compares the left side with c0 C(A,t,q) t^(-1/(2q*)) delta^(1/q*).

    Returns:
    ExperimentReport with columns t, delta, lhs, lhs_se, rhs, ratio and fitted
    delta-exponents per t and t-exponents per delta
    """
    if not q > 1:
        raise ValueError(f"q must lie in (1, inf), got {q}")
    q_star = q / (q - 1.0)
    c = _field_center(field) if center is None else np.asarray(center, dtype=np.float64)
    u = np.eye(field.dim)[0] if direction is None else np.asarray(direction, dtype=np.float64)
    u = u / np.linalg.norm(u)
    rows, clamps = [], 0
    for i, t in enumerate(t_list):
        grid = TimeGrid.from_dt(t, dt)
        rhs_unit = coupling_rhs(field, grid.t_end, q, c0, kato_query)
        for j, delta in enumerate(delta_list):
            lhs = coupling_lhs(field, grid.t_end, c + 0.5 * delta * u, c - 0.5 * delta * u, n_paths, grid,
                               cell_seed(seed, i, j), workers)
            clamps += lhs.clamps
            rhs = rhs_unit * delta ** (1.0 / q_star)
            if lhs.mean == 0:
                ratio = 0.0
            else:
                ratio = lhs.mean / rhs if rhs > 0 else math.inf
            rows.append({"t": grid.t_end, "delta": float(delta), "lhs": lhs.mean, "lhs_se": lhs.std_error,
                         "rhs": rhs, "ratio": ratio})
            logger.info("t=%g delta=%g lhs=%.4g+-%.2g rhs=%.4g", grid.t_end, delta, lhs.mean, lhs.std_error, rhs)
    table = pd.DataFrame(rows, columns=["t", "delta", "lhs", "lhs_se", "rhs", "ratio"])

    fits: Dict[str, Any] = {"target_delta_exponent": 1.0 / q_star, "delta_exponent": {}, "t_exponent": {}}
    for t, group in table.groupby("t", sort=False):
        if len(group) >= 2 and (group["lhs"] > 0).all():
            fits["delta_exponent"][float(t)] = _loglog_fit(group["delta"], group["lhs"])[0]
    for delta, group in table.groupby("delta", sort=False):
        if len(group) >= 2 and (group["lhs"] > 0).all():
            fits["t_exponent"][float(delta)] = _loglog_fit(group["t"], group["lhs"])[0]
    header = {"experiment": "verify-main", "inequality": COUPLING_INEQUALITY, "field": field.name, "q": q,
              "q_star": q_star, "c0": c0, "seed": seed, "dt": dt, "n_paths": n_paths, "clamps": clamps,
              "center": c.tolist(), "direction": u.tolist()}
    return ExperimentReport(table, header, fits)


def _is_zero_field(field: FieldSpec) -> bool:
    return not field.has_vector_potential and field.divergence is None


def smoothing_experiment(field: FieldSpec, psi: InitialFunction, beta: float, t_list: Sequence[float],
                         pairset: PairSet, n_paths: int, dt: float, seed: int, closed_form: Optional[bool] = None,
                         n_boot: int = 200, workers: Optional[int] = None) -> ExperimentReport:
    """
    Empirical beta-seminorm of e^{-tH(A,0)} Psi on a pairset, across t.

    For each t the seminorm is max |P_t Psi(x) - P_t Psi(y)| / |x - y|^beta over
    the pairset; log(seminorm) is then fitted against log(t) and compared with
    -beta/2. closed_form uses Psi's heat flow when A = 0 (default: whenever
    available).
    """
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0,1), got {beta}")
    if not math.isfinite(psi.sup_norm):
        raise ValueError(f"{psi.name} must be bounded")
    if closed_form is None:
        closed_form = _is_zero_field(field) and psi.heat_flow is not None
    if closed_form and not (_is_zero_field(field) and psi.heat_flow is not None):
        raise ValueError("closed-form mode needs A = 0 and an initial function with a known heat flow")

    pairs = pairset.pairs()
    cell_rows, rows = [], []
    batches = []
    for i, t in enumerate(t_list):
        t_batches = []
        for k, (base, x, y, delta) in enumerate(pairs):
            if closed_form:
                diff = float(psi.heat_flow(t, x)[0] - psi.heat_flow(t, y)[0])
                se, phase, rough = 0.0, 0.0, 0.0
                t_batches.append(np.array([diff]))
                t_end = t
            else:
                grid = TimeGrid.from_dt(t, dt)
                t_end = grid.t_end
                pd_est = evaluate_pair_difference(field, t_end, x, y, psi, n_paths, grid, cell_seed(seed, i, k),
                                                  workers=workers)
                diff = float(np.real(pd_est.difference.mean))
                se = pd_est.difference.std_error
                phase, rough = pd_est.phase_term.mean, pd_est.rough_term.mean
                t_batches.append(np.real(pd_est.difference.batch_means))
            cell_rows.append({"t": t_end, "base": base, "delta": delta, "difference": diff, "difference_se": se,
                              "quotient": abs(diff) / delta ** beta, "phase_term": phase, "rough_term": rough})
        batches.append(t_batches)
        t_cells = cell_rows[-len(pairs):]
        best = max(t_cells, key=lambda r: r["quotient"])
        rows.append({"t": best["t"], "seminorm": best["quotient"], "seminorm_se": best["difference_se"] / best["delta"] ** beta,
                     "argmax_delta": best["delta"], "n_pairs": len(pairs)})
        logger.info("t=%g seminorm=%.4g (delta=%g)", best["t"], best["quotient"], best["delta"])
    table = pd.DataFrame(rows, columns=["t", "seminorm", "seminorm_se", "argmax_delta", "n_pairs"])
    cells = pd.DataFrame(cell_rows, columns=["t", "base", "delta", "difference", "difference_se", "quotient",
                                             "phase_term", "rough_term"])

    fits: Dict[str, Any] = {"target_t_slope": -beta / 2.0}
    if len(table) >= 2 and (table["seminorm"] > 0).all():
        slope = _loglog_fit(table["t"], table["seminorm"])[0]
        fits["t_slope"] = slope
        fits["t_slope_ci"] = _batch_bootstrap_slope(table["t"].to_numpy(), batches, pairset, beta, n_boot, seed) \
            if not closed_form else (slope, slope)
    for t, group in cells.groupby("t", sort=False):
        try:
            fits.setdefault("beta_hat", {})[float(t)] = holder_fit(pairset, group["difference"], beta, 0, seed).beta_hat
        except ValueError:
            pass
    header = {"experiment": "verify-smoothing", "inequality": SMOOTHING_INEQUALITY, "field": field.name,
              "psi": psi.name, "beta": beta, "closed_form": bool(closed_form), "seed": seed, "dt": dt,
              "n_paths": n_paths if not closed_form else 0, "n_pairs": len(pairs),
              "distances": list(pairset.distances), "base_points": pairset.base_points.tolist(),
              "centered": pairset.centered}
    return ExperimentReport(table, header, fits, cells)


def _batch_bootstrap_slope(t_values, batches, pairset, beta, n_boot, seed):
    """Percentile interval of the t-slope, resampling path batches within every cell."""
    rng = np.random.default_rng(seed)
    deltas = pairset.pair_distances
    slopes = []
    for _ in range(n_boot):
        seminorms = []
        for t_batches in batches:
            q = [abs(np.mean(b[rng.integers(0, b.size, b.size)])) / d ** beta for b, d in zip(t_batches, deltas)]
            seminorms.append(max(q))
        if min(seminorms) > 0:
            slopes.append(_loglog_fit(t_values, seminorms)[0])
    if not slopes:
        return (math.nan, math.nan)
    low, high = np.percentile(slopes, [2.5, 97.5])
    return (float(low), float(high))


def _ladder_steps(t: float, dt_ladder: Sequence[float]):
    levels = sorted({max(1, int(round(t / dt))) for dt in dt_ladder})
    finest = levels[-1]
    for n in levels:
        if finest % n:
            raise ValueError(f"dt ladder must refine consistently: {n} steps do not divide {finest}")
    return levels, finest


def nase_residual_experiment(field: FieldSpec, geom: MirrorGeometry, dt_ladder: Sequence[float], n_pairs: int,
                             seed: int, t: float = 1.0, workers: Optional[int] = None) -> ExperimentReport:
    """
    Residual of S_t(X) - S_t(Y) = M_t + I_t along a dt-refinement ladder on matched drivers.

    Every pair draws its finest-grid Gaussian increments once; coarser grids
    use their block sums. Bridge uniforms are drawn per level afterwards.

    Returns:
    ExperimentReport with mean-square residual, E|M|, E|I|, E|dS| and the
    coupled fraction per dt, plus the fitted decay slope and a monotonicity flag
    """
    levels, finest = _ladder_steps(t, dt_ladder)
    fine_grid = TimeGrid(t, finest)
    grids = [TimeGrid(t, n) for n in levels]

    def kernel(start, stop):
        n = stop - start
        fine = np.empty((n, finest, geom.dim))
        uniforms = [np.empty((n, g.n_steps)) for g in grids]
        for j in range(n):
            gen = RngStream(seed, start + j).generator()
            fine[j] = gen.standard_normal((finest, geom.dim))
            for level, g in enumerate(grids):
                uniforms[level][j] = gen.random(g.n_steps)
        fine *= math.sqrt(fine_grid.dt)
        out = {}
        for level, g in enumerate(grids):
            factor = finest // g.n_steps
            increments = fine.reshape(n, g.n_steps, factor, geom.dim).sum(axis=2)
            X = paths_from_increments(geom.x, increments)
            Y, tau_step, _ = couple_block(geom, g, X, uniforms[level])
            parts = decompose_block(field, geom, X, Y, tau_step, g.dt)
            out[f"residual_{level}"] = parts["residual"]
            out[f"M_{level}"] = parts["M"]
            out[f"I_{level}"] = parts["I"]
            out[f"dS_{level}"] = parts["phase_X"] - parts["phase_Y"]
            out[f"coupled_{level}"] = (tau_step >= 0).astype(np.float64)
            out[f"clamps_{level}"] = parts["clamps"]
        return out

    out = map_path_blocks(kernel, n_pairs, block_size_for(finest, geom.dim), workers)
    rows = []
    for level, g in enumerate(grids):
        sq = out[f"residual_{level}"] ** 2
        rows.append({
            "dt": g.dt,
            "n_steps": g.n_steps,
            "residual_ms": float(sq.mean()),
            "residual_ms_se": float(sq.std(ddof=1) / math.sqrt(sq.size)) if sq.size > 1 else 0.0,
            "mean_abs_M": float(np.abs(out[f"M_{level}"]).mean()),
            "mean_abs_I": float(np.abs(out[f"I_{level}"]).mean()),
            "mean_abs_dS": float(np.abs(out[f"dS_{level}"]).mean()),
            "coupled_fraction": float(out[f"coupled_{level}"].mean()),
            "clamps": int(out[f"clamps_{level}"].sum()),
        })
    table = pd.DataFrame(rows)
    ms = table["residual_ms"].to_numpy()
    fits: Dict[str, Any] = {
        "monotone": bool(np.all(np.diff(ms) <= 0)),
        "final_residual_ms": float(ms[-1]),
        "decay_slope": _loglog_fit(table["dt"], ms)[0] if len(ms) >= 2 and np.all(ms > 0) else math.nan,
    }
    header = {"experiment": "verify-nase", "identity": DECOMPOSITION_IDENTITY, "field": field.name, "t": t,
              "x": geom.x.tolist(), "y": geom.y.tolist(), "seed": seed, "n_pairs": n_pairs,
              "dt_ladder": [g.dt for g in grids], "clamps": int(table["clamps"].sum())}
    return ExperimentReport(table, header, fits)
