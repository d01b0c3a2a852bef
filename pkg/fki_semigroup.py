"""
Feynman-Kac-Ito Semigroup Module
Monte Carlo evaluation of e^{-tH(A,V)} Psi(x) = E[exp(-S_t(A|Z) - int_0^t V(Z_s) ds) Psi(Z_t)],
mirror-coupled pair differences and both sides of the coupling estimate.

H(A,V) = (1/2)(i grad + A)^2 + V. Weights are built per path in log space and
the phase is kept as a real angle; a real-only fast path is used when A = 0.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
from scipy import special, stats

from brownian_coupling import (INDEPENDENT_STREAM_OFFSET, NOT_COUPLED, McEstimate, MirrorGeometry, TimeGrid,
                               block_size_for, cell_seed, couple_block, draw_increments, map_path_blocks,
                               paths_from_increments)
from kato_class import KatoQuery, dv_profile, magnetic_constant
from magnetic_action import FieldSpec, phase_terms

logger = logging.getLogger(__name__)

DEFAULT_CLAMP_WARN_RATE = 0.01
BOUND_LEVELS = 12
BOUND_NODES = 4


@dataclass(frozen=True)
class InitialFunction:
    """
    Initial datum Psi with what is known about it in closed form.

    evaluate: vectorized (m, d) -> (m,) real or complex values
    heat_flow: closed-form e^{t Delta/2} Psi as (t, points) -> values, when available
    """

    name: str
    evaluate: Callable[[np.ndarray], np.ndarray]
    heat_flow: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    sup_norm: float = math.inf
    lipschitz: float = math.inf

    def __call__(self, points) -> np.ndarray:
        return self.evaluate(np.atleast_2d(np.asarray(points, dtype=np.float64)))

    @classmethod
    def constant(cls, value: float = 1.0) -> "InitialFunction":
        return cls(f"constant {value:g}", lambda x: np.full(x.shape[0], float(value)),
                   lambda t, x: np.full(np.atleast_2d(x).shape[0], float(value)), abs(value), 0.0)

    @classmethod
    def gaussian(cls, width: float = 1.0) -> "InitialFunction":
        """exp(-|x|^2 / (2 width^2)); the heat flow stays Gaussian with variance width^2 + t."""
        w2 = float(width) ** 2

        def heat_flow(t, x):
            x = np.atleast_2d(x)
            d = x.shape[1]
            return (w2 / (w2 + t)) ** (d / 2.0) * np.exp(-np.sum(x ** 2, axis=-1) / (2.0 * (w2 + t)))

        return cls(f"gaussian width {width:g}", lambda x: np.exp(-np.sum(x ** 2, axis=-1) / (2.0 * w2)),
                   heat_flow, 1.0, math.exp(-0.5) / float(width))

    @classmethod
    def half_space(cls, axis: int = 0) -> "InitialFunction":
        """Indicator of {x_axis > 0}; its heat flow is the normal CDF of x_axis / sqrt(t)."""
        return cls(f"half-space x{axis + 1}>0", lambda x: (x[:, axis] > 0).astype(np.float64),
                   lambda t, x: stats.norm.cdf(np.atleast_2d(x)[:, axis] / math.sqrt(t)), 1.0, math.inf)

    @classmethod
    def landau_ground_state(cls, B: float = 1.0) -> "InitialFunction":
        """exp(-B |x|^2 / 4), the lowest Landau level of the symmetric gauge, energy B/2."""
        psi = cls.gaussian(math.sqrt(2.0 / B))
        return cls(f"landau ground state B={B:g}", psi.evaluate, psi.heat_flow, 1.0, psi.lipschitz)

    @classmethod
    def ramp(cls, axis: int = 0, scale: float = 1.0) -> "InitialFunction":
        return cls(f"tanh ramp x{axis + 1}/{scale:g}", lambda x: np.tanh(x[:, axis] / scale), None, 1.0,
                   1.0 / scale)


INITIAL_FUNCTIONS = {
    "constant": InitialFunction.constant,
    "gaussian": InitialFunction.gaussian,
    "half_space": InitialFunction.half_space,
    "landau": InitialFunction.landau_ground_state,
    "ramp": InitialFunction.ramp,
}


@dataclass(frozen=True)
class SemigroupQuery:
    field: FieldSpec
    t: float
    points: np.ndarray
    psi: InitialFunction
    n_paths: int
    grid: TimeGrid
    seed: int = 0
    workers: Optional[int] = None
    clamp_warn_rate: float = DEFAULT_CLAMP_WARN_RATE

    def __post_init__(self):
        if abs(self.grid.t_end - self.t) > 1e-12 * max(1.0, self.t):
            raise ValueError(f"t={self.t} must equal the grid horizon {self.grid.t_end}")
        if self.n_paths < 2:
            raise ValueError(f"need at least 2 paths for error bars, got {self.n_paths}")
        points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if points.shape[1] != self.field.dim:
            raise ValueError(f"points must lie in R^{self.field.dim}, got shape {points.shape}")
        if not np.all(np.isfinite(points)):
            raise ValueError("evaluation points must be finite")
        object.__setattr__(self, "points", points)


@dataclass(frozen=True)
class PairDifference:
    """Coupled estimate of the semigroup difference and the two terms bounding its modulus."""

    difference: McEstimate
    phase_term: McEstimate
    rough_term: McEstimate
    uncoupled_fraction: float


def _potential_integral(field: FieldSpec, left_points: np.ndarray, dt: float):
    if not field.has_potential:
        return np.zeros(left_points.shape[0]), 0
    v, clamps = field.evaluate_potential(left_points)
    return v.astype(np.longdouble).sum(axis=-1).astype(np.float64) * dt, clamps


def _phase_weights(field: FieldSpec, paths: np.ndarray, dt: float):
    """Per-path e^{-i theta}, or real ones when the field carries no vector potential."""
    if not field.has_vector_potential and field.divergence is None:
        return np.ones(paths.shape[0]), 0
    terms, clamps = phase_terms(field, paths, dt)
    theta = terms.astype(np.longdouble).sum(axis=-1).astype(np.float64)
    return np.cos(theta) - 1j * np.sin(theta), clamps


def _weighted_values(field: FieldSpec, psi: InitialFunction, paths: np.ndarray, dt: float):
    """Per-path exp(-i theta - int V) Psi(Z_t)."""
    log_w, c1 = _potential_integral(field, paths[:, :-1, :], dt)
    weights, c2 = _phase_weights(field, paths, dt)
    return np.exp(-log_w) * weights * psi(paths[:, -1, :]), c1 + c2


def evaluate(query: SemigroupQuery) -> List[McEstimate]:
    """
    Feynman-Kac-Ito estimate of e^{-tH(A,V)} Psi at each query point.

    Parameters:
    query: SemigroupQuery

    Returns:
    list of McEstimate, one per point, in point order
    """
    field, grid = query.field, query.grid
    estimates = []
    for j, x in enumerate(query.points):
        seed = cell_seed(query.seed, j)

        def kernel(start, stop, x=x, seed=seed):
            increments, _ = draw_increments(seed, start, stop, grid, field.dim)
            paths = paths_from_increments(x, increments)
            values, clamps = _weighted_values(field, query.psi, paths, grid.dt)
            return {"value": values, "clamps": np.array([clamps])}

        out = map_path_blocks(kernel, query.n_paths, block_size_for(grid.n_steps, field.dim), query.workers)
        clamps = int(out["clamps"].sum())
        est = McEstimate.from_samples(out["value"], seed=seed, clamps=clamps,
                                      clamp_budget=query.n_paths * grid.n_steps,
                                      clamp_warn_rate=query.clamp_warn_rate)
        logger.debug("evaluate %s at %s: %s", field.name, x, est.mean)
        estimates.append(est)
    return estimates


def _pair_kernel(field, geom, grid, psi, seed, independent):
    def kernel(start, stop):
        increments, uniforms = draw_increments(seed, start, stop, grid, geom.dim, n_uniform_rows=1)
        X = paths_from_increments(geom.x, increments)
        if independent:
            other, _ = draw_increments(seed, start, stop, grid, geom.dim, index_offset=INDEPENDENT_STREAM_OFFSET)
            Y = paths_from_increments(geom.y, other)
            tau_step = np.full(stop - start, NOT_COUPLED)
        else:
            Y, tau_step, _ = couple_block(geom, grid, X, uniforms[0])
        wx, c1 = _phase_weights(field, X, grid.dt)
        wy, c2 = _phase_weights(field, Y, grid.dt)
        psi_x, psi_y = psi(X[:, -1, :]), psi(Y[:, -1, :])
        uncoupled = tau_step == NOT_COUPLED
        return {
            "difference": wx * psi_x - wy * psi_y,
            "phase": np.abs(wx - wy) * np.abs(psi_x),
            "rough": np.abs(psi_x - psi_y) * uncoupled,
            "uncoupled": uncoupled.astype(np.float64),
            "clamps": np.array([c1 + c2]),
        }
    return kernel


def evaluate_pair_difference(field: FieldSpec, t: float, x, y, psi: InitialFunction, n_paths: int,
                             grid: TimeGrid, seed: int, independent: bool = False,
                             workers: Optional[int] = None) -> PairDifference:
    """
    Estimate e^{-tH(A,0)}Psi(x) - e^{-tH(A,0)}Psi(y) on mirror-coupled pairs.

    The scalar potential is ignored. independent=True drives Y by its own
    streams instead of the coupling, for variance comparisons.

    Returns:
    PairDifference with the difference estimate, E|e^{-S(X)} - e^{-S(Y)}||Psi(X_t)|
    and E|Psi(X_t) - Psi(Y_t)| 1{t < tau}
    """
    if abs(grid.t_end - t) > 1e-12 * max(1.0, t):
        raise ValueError(f"t={t} must equal the grid horizon {grid.t_end}")
    geom = MirrorGeometry(np.atleast_1d(x), np.atleast_1d(y))
    if geom.dim != field.dim:
        raise ValueError(f"points must lie in R^{field.dim}")
    out = map_path_blocks(_pair_kernel(field, geom, grid, psi, seed, independent), n_paths,
                          block_size_for(grid.n_steps, field.dim), workers)
    clamps = int(out["clamps"].sum())
    return PairDifference(
        difference=McEstimate.from_samples(out["difference"], seed=seed, clamps=clamps),
        phase_term=McEstimate.from_samples(out["phase"], seed=seed),
        rough_term=McEstimate.from_samples(out["rough"], seed=seed),
        uncoupled_fraction=float(out["uncoupled"].mean()),
    )


def phase_difference_block(field: FieldSpec, geom: MirrorGeometry, grid: TimeGrid, seed: int,
                           start: int, stop: int):
    """Per-pair theta_X - theta_Y on coupled pairs; the per-step difference is exactly 0 after coupling."""
    increments, uniforms = draw_increments(seed, start, stop, grid, geom.dim, n_uniform_rows=1)
    X = paths_from_increments(geom.x, increments)
    Y, tau_step, _ = couple_block(geom, grid, X, uniforms[0])
    tx, c1 = phase_terms(field, X, grid.dt)
    ty, c2 = phase_terms(field, Y, grid.dt)
    delta = (tx - ty).astype(np.longdouble).sum(axis=-1).astype(np.float64)
    return delta, tau_step, c1 + c2


def coupling_lhs(field: FieldSpec, t: float, x, y, n_paths: int, grid: TimeGrid, seed: int,
                 workers: Optional[int] = None) -> McEstimate:
    """E|e^{-S_t(A|X)} - e^{-S_t(A|Y)}| = E|2 sin((theta_X - theta_Y)/2)| over mirror-coupled pairs."""
    if abs(grid.t_end - t) > 1e-12 * max(1.0, t):
        raise ValueError(f"t={t} must equal the grid horizon {grid.t_end}")
    geom = MirrorGeometry(np.atleast_1d(x), np.atleast_1d(y))

    def kernel(start, stop):
        delta, _, clamps = phase_difference_block(field, geom, grid, seed, start, stop)
        return {"lhs": np.abs(2.0 * np.sin(delta / 2.0)), "clamps": np.array([clamps])}

    out = map_path_blocks(kernel, n_paths, block_size_for(grid.n_steps, geom.dim), workers)
    return McEstimate.from_samples(out["lhs"], seed=seed, clamps=int(out["clamps"].sum()),
                                   clamp_budget=n_paths * grid.n_steps * 2)


def coupling_rhs(field: FieldSpec, t: float, q: float, c0: float = 1.0,
                 kato_query: Optional[KatoQuery] = None) -> float:
    """c0 * C(A, t, q) * t^(-1/(2 q*)), the bound per unit |x - y|^(1/q*)."""
    if not q > 1:
        raise ValueError(f"q must lie in (1, inf), got {q}")
    if not c0 > 0:
        raise ValueError(f"c0 must be positive, got {c0}")
    q_star = q / (q - 1.0)
    return c0 * magnetic_constant(field, t, q, kato_query) * t ** (-1.0 / (2.0 * q_star))


def eigen_residual(field: FieldSpec, psi: InitialFunction, energy: float, t: float, points, n_paths: int,
                   grid: TimeGrid, seed: int, workers: Optional[int] = None) -> List[McEstimate]:
    """|e^{-tH}Psi(x) - e^{-t energy} Psi(x)| per point, with the semigroup estimate's standard error."""
    query = SemigroupQuery(field, t, points, psi, n_paths, grid, seed, workers)
    target = math.exp(-t * energy) * psi(query.points)
    out = []
    for est, expected in zip(evaluate(query), target):
        out.append(McEstimate(abs(est.mean - expected), est.std_error, est.n, est.clamps, est.seed, est.status,
                              est.batch_means))
    return out


def hamiltonian_apply(field: FieldSpec, psi: InitialFunction, points, h: float = 1e-3) -> np.ndarray:
    """
    Finite-difference H(A,V) Psi = (1/2)(-Lap Psi + i div A Psi + 2i A.grad Psi + |A|^2 Psi) + V Psi.

    Returns:
    complex array of H Psi at the points
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d = pts.shape[1]
    center = psi(pts).astype(np.complex128)
    grad = np.zeros(pts.shape, dtype=np.complex128)
    lap = np.zeros(pts.shape[0], dtype=np.complex128)
    for i in range(d):
        step = np.zeros(d)
        step[i] = h
        plus, minus = psi(pts + step), psi(pts - step)
        grad[:, i] = (plus - minus) / (2.0 * h)
        lap += (plus - 2.0 * center + minus) / h ** 2
    a, _ = field.evaluate_vector(pts)
    div, _ = field.evaluate_divergence(pts)
    v, _ = field.evaluate_potential(pts)
    kinetic = -lap + 1j * div * center + 2j * np.sum(a * grad, axis=-1) + np.sum(a ** 2, axis=-1) * center
    return 0.5 * kinetic + v * center


def check_eigenfunction(field: FieldSpec, psi: InitialFunction, energy: float, points, h: float = 1e-3,
                        rel_tol: float = 1e-4):
    """
    Check H(A,V) Psi = energy * Psi by finite differences.

    Returns:
    (max |H Psi - energy Psi| / max |Psi|, passed flag)
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    residual = np.abs(hamiltonian_apply(field, psi, pts, h) - energy * psi(pts))
    scale = max(float(np.max(np.abs(psi(pts)))), 1e-300)
    rel = float(np.max(residual)) / scale
    return rel, rel <= rel_tol


def holder_norm_bound(field: FieldSpec, beta: float, t: float, p: float, q: float, c0: float = 1.0,
                      c_v: float = 1.0, kato_query: Optional[KatoQuery] = None) -> float:
    """
    Envelope of ||e^{-tH(A,V)}||_{L^p -> C^{0,beta} cap L^q} for given c0 and C_V.

    C_V t^{-d/2 (1/p - 1/q)} e^{C_V t}
      + [c0 C(A,t/2,qb)(t/2)^{-beta/2} + c0 (t/2)^{-beta/2}
         + C_V e^{C_V t/2} int_0^{t/2} (C(A,s/2,qb) + 1) s^{-beta/2} D_V(s/2) ds]
        * C_V (t/2)^{-d/(2p)} e^{C_V t/2},  with qb = 1/(1 - beta)
    """
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0,1), got {beta}")
    if not 1.0 <= p <= q <= math.inf:
        raise ValueError(f"need 1 <= p <= q <= inf, got p={p}, q={q}")
    d = field.dim
    qb = 1.0 / (1.0 - beta)
    half = t / 2.0
    inv_q = 0.0 if math.isinf(q) else 1.0 / q

    x, w = special.roots_legendre(BOUND_NODES)
    integral = 0.0
    for k in range(BOUND_LEVELS):
        b = half * 2.0 ** -k
        a = b / 2.0
        for node, weight in zip(a + (b - a) * (x + 1.0) / 2.0, (b - a) / 2.0 * w):
            c_a = magnetic_constant(field, node / 2.0, qb, kato_query) if field.has_vector_potential else 0.0
            integral += weight * (c_a + 1.0) * node ** (-beta / 2.0) * dv_profile(field, node / 2.0)

    c_half = magnetic_constant(field, half, qb, kato_query) if field.has_vector_potential else 0.0
    bracket = c0 * c_half * half ** (-beta / 2.0) + c0 * half ** (-beta / 2.0) \
        + c_v * math.exp(c_v * half) * integral
    return c_v * t ** (-d / 2.0 * (1.0 / p - inv_q)) * math.exp(c_v * t) \
        + bracket * c_v * half ** (-d / (2.0 * p)) * math.exp(c_v * half)
