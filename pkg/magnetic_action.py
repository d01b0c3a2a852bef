"""
Magnetic Action Module
Discretized magnetic action along Brownian paths (left-point Ito sums) and the
decomposition of the action difference of a mirror-coupled pair.

A field is a bundle of vectorized evaluators: every evaluator receives an
(m, d) array of positions and returns (m, d) vectors or (m,) scalars.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from brownian_coupling import BrownianPath, CoupledPaths, MirrorGeometry, NOT_COUPLED

logger = logging.getLogger(__name__)

Evaluator = Callable[[np.ndarray], np.ndarray]


class FieldEvaluationError(ValueError):
    """A field evaluator produced a non-finite value."""

    def __init__(self, field_name: str, quantity: str, point):
        self.point = np.asarray(point, dtype=float)
        super().__init__(
            f"{field_name}: non-finite {quantity} at point {np.array2string(self.point, precision=6)}"
        )


@dataclass(frozen=True)
class FieldSpec:
    """
    Vector potential A, its divergence and a scalar potential V on R^d.

    Missing evaluators mean the quantity vanishes identically. beta is the
    Holder exponent the field is declared suitable for; q = 1/(1 - beta) and
    q* = 1/beta follow from it. a_cap and v_cap clamp |A| and |V|.
    """

    name: str
    dim: int
    vector_potential: Optional[Evaluator] = None
    divergence: Optional[Evaluator] = None
    potential: Optional[Evaluator] = None
    beta: Optional[float] = None
    a_cap: Optional[float] = None
    v_cap: Optional[float] = None
    magnetic_profile: Any = None
    potential_terms: Tuple[Any, ...] = ()
    candidates: Tuple[Tuple[float, ...], ...] = ()
    divergence_vanishes: bool = False
    locally_kato_only: bool = False
    params: Dict[str, Any] = field(default_factory=dict, compare=False)
    notes: str = ""

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"field dimension must be a positive integer, got {self.dim}")
        if self.beta is not None and not 0.0 < self.beta < 1.0:
            raise ValueError(f"declared beta must lie in (0,1), got {self.beta}")
        for cap_name in ("a_cap", "v_cap"):
            cap = getattr(self, cap_name)
            if cap is not None and not cap > 0:
                raise ValueError(f"{cap_name} must be positive, got {cap}")
        if self.vector_potential is None and self.divergence is None:
            object.__setattr__(self, "divergence_vanishes", True)

    @property
    def q(self) -> Optional[float]:
        return None if self.beta is None else 1.0 / (1.0 - self.beta)

    @property
    def q_star(self) -> Optional[float]:
        return None if self.beta is None else 1.0 / self.beta

    @property
    def has_vector_potential(self) -> bool:
        return self.vector_potential is not None

    @property
    def has_potential(self) -> bool:
        return self.potential is not None

    def _flat(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        if pts.shape[-1] != self.dim:
            raise ValueError(f"{self.name}: expected points in R^{self.dim}, got shape {pts.shape}")
        return pts.reshape(-1, self.dim)

    def _check_finite(self, values, flat, quantity):
        bad = ~np.isfinite(values)
        if bad.ndim > 1:
            bad = bad.any(axis=-1)
        if bad.any():
            raise FieldEvaluationError(self.name, quantity, flat[np.argmax(bad)])

    def evaluate_vector(self, points) -> Tuple[np.ndarray, int]:
        """
        Evaluate A at points of shape (..., d).

        Returns:
        (values of shape (..., d), number of clamped evaluations)
        """
        pts = np.asarray(points, dtype=np.float64)
        if self.vector_potential is None:
            return np.zeros(pts.shape), 0
        flat = self._flat(pts)
        values = np.array(self.vector_potential(flat), dtype=np.float64).reshape(flat.shape)
        clamps = 0
        if self.a_cap is not None:
            with np.errstate(invalid="ignore"):
                over = np.linalg.norm(values, axis=-1) > self.a_cap
            clamps = int(over.sum())
            if clamps:
                capped = np.nan_to_num(values[over], nan=np.nan, posinf=self.a_cap, neginf=-self.a_cap)
                values[over] = capped * (self.a_cap / np.linalg.norm(capped, axis=-1))[:, None]
                logger.debug("%s: clamped %d of %d |A| values at %g", self.name, clamps, len(flat), self.a_cap)
        self._check_finite(values, flat, "vector potential")
        return values.reshape(pts.shape), clamps

    def evaluate_divergence(self, points) -> Tuple[np.ndarray, int]:
        pts = np.asarray(points, dtype=np.float64)
        if self.divergence is None:
            return np.zeros(pts.shape[:-1]), 0
        flat = self._flat(pts)
        values = np.asarray(self.divergence(flat), dtype=np.float64).reshape(flat.shape[0])
        self._check_finite(values, flat, "divergence")
        return values.reshape(pts.shape[:-1]), 0

    def evaluate_potential(self, points) -> Tuple[np.ndarray, int]:
        """Evaluate V at points of shape (..., d), clamping |V| at v_cap (infinite values included)."""
        pts = np.asarray(points, dtype=np.float64)
        if self.potential is None:
            return np.zeros(pts.shape[:-1]), 0
        flat = self._flat(pts)
        with np.errstate(divide="ignore", invalid="ignore"):
            values = np.asarray(self.potential(flat), dtype=np.float64).reshape(flat.shape[0])
        clamps = 0
        if self.v_cap is not None:
            over = np.abs(values) > self.v_cap
            clamps = int(over.sum())
            values = np.where(over, np.sign(values) * self.v_cap, values)
            if clamps:
                logger.debug("%s: clamped %d of %d |V| values at %g", self.name, clamps, len(flat), self.v_cap)
        self._check_finite(values, flat, "scalar potential")
        return values.reshape(pts.shape[:-1]), clamps

    def scaled(self, c: float) -> "FieldSpec":
        """Field with A and div A multiplied by c (V untouched)."""
        a, div = self.vector_potential, self.divergence
        profile = self.magnetic_profile
        if profile is not None:
            profile = dataclasses.replace(profile, coefficient=abs(c) * profile.coefficient)
        return dataclasses.replace(
            self,
            name=f"{c:g}*{self.name}",
            vector_potential=None if a is None else (lambda p: c * a(p)),
            divergence=None if div is None else (lambda p: c * div(p)),
            a_cap=None if self.a_cap is None else abs(c) * self.a_cap,
            magnetic_profile=profile,
        )

    def __add__(self, other: "FieldSpec") -> "FieldSpec":
        """
        Field with A, div A and V summed.

        A quantity present in one summand only keeps that summand's cap and
        radial decomposition. When both summands carry it, each is clamped at
        its own cap before adding and the sum has no cap of its own, so those
        clamps show up in the debug log but not in clamp counts.
        """
        if other.dim != self.dim:
            raise ValueError(f"cannot add fields on R^{self.dim} and R^{other.dim}")

        def add(f, g, evaluate_f, evaluate_g):
            if f is None:
                return g
            if g is None:
                return f
            return lambda p: evaluate_f(p)[0] + evaluate_g(p)[0]

        def single(f, g, value_f, value_g):
            if g is None:
                return value_f
            if f is None:
                return value_g
            return None

        def radial_complete(f):
            return not f.has_potential or bool(f.potential_terms)

        a1, a2 = self.vector_potential, other.vector_potential
        v1, v2 = self.potential, other.potential
        potential_terms = ()
        if radial_complete(self) and radial_complete(other):
            potential_terms = self.potential_terms + other.potential_terms
        params = {**self.params, **other.params}
        axes = [f.params.get("active_axes") for f in (self, other)
                if f.vector_potential is not None or f.potential is not None]
        params.pop("active_axes", None)
        if axes and all(a is not None for a in axes):
            params["active_axes"] = tuple(sorted(set().union(*axes)))

        return FieldSpec(
            name=f"{self.name}+{other.name}",
            dim=self.dim,
            vector_potential=add(a1, a2, self.evaluate_vector, other.evaluate_vector),
            divergence=add(self.divergence, other.divergence, self.evaluate_divergence, other.evaluate_divergence),
            potential=add(v1, v2, self.evaluate_potential, other.evaluate_potential),
            a_cap=single(a1, a2, self.a_cap, other.a_cap),
            v_cap=single(v1, v2, self.v_cap, other.v_cap),
            magnetic_profile=single(a1, a2, self.magnetic_profile, other.magnetic_profile),
            potential_terms=potential_terms,
            candidates=self.candidates + other.candidates,
            beta=self.beta if self.beta == other.beta else None,
            divergence_vanishes=self.divergence_vanishes and other.divergence_vanishes,
            locally_kato_only=self.locally_kato_only or other.locally_kato_only,
            params=params,
        )


@dataclass(frozen=True)
class ActionSample:
    """Action S = i*theta of one path; only the real phase theta is stored."""

    phase: float
    path_ref: Any = None

    @property
    def action(self) -> complex:
        return 1j * self.phase

    @property
    def weight(self) -> complex:
        return complex(math.cos(self.phase), -math.sin(self.phase))


@dataclass(frozen=True)
class ActionDecomposition:
    phase_X: float
    phase_Y: float
    M: float
    I: float
    residual: float


def _sum_steps(terms: np.ndarray) -> np.ndarray:
    """Sum per-step terms over the last axis in extended precision."""
    return terms.astype(np.longdouble).sum(axis=-1).astype(np.float64)


def ito_terms(field: FieldSpec, points: np.ndarray) -> Tuple[np.ndarray, int]:
    """Per-step left-point terms <A(Z_k), Z_{k+1} - Z_k>, shape (..., n_steps)."""
    a, clamps = field.evaluate_vector(points[..., :-1, :])
    return np.einsum("...kd,...kd->...k", a, np.diff(points, axis=-2)), clamps


def divergence_terms(field: FieldSpec, points: np.ndarray, dt: float) -> Tuple[np.ndarray, int]:
    div, clamps = field.evaluate_divergence(points[..., :-1, :])
    return div * dt, clamps


def phase_terms(field: FieldSpec, points: np.ndarray, dt: float) -> Tuple[np.ndarray, int]:
    """Per-step phase increments <A(Z_k), dZ_k> + div A(Z_k) dt / 2."""
    if not field.has_vector_potential and field.divergence is None:
        return np.zeros(points.shape[:-2] + (points.shape[-2] - 1,)), 0
    ito, c1 = ito_terms(field, points)
    div, c2 = divergence_terms(field, points, dt)
    return ito + 0.5 * div, c1 + c2


def phase_block(field: FieldSpec, points: np.ndarray, dt: float) -> Tuple[np.ndarray, int]:
    terms, clamps = phase_terms(field, points, dt)
    return _sum_steps(terms), clamps


def ito_integral(field: FieldSpec, path: BrownianPath) -> float:
    """
    Left-point Ito sum of A along a path.

    Parameters:
    field: FieldSpec providing A
    path: BrownianPath

    Returns:
    sum_k <A(Z_{t_k}), Z_{t_{k+1}} - Z_{t_k}>
    """
    terms, _ = ito_terms(field, path.points)
    return float(_sum_steps(terms))


def divergence_integral(field: FieldSpec, path: BrownianPath) -> float:
    terms, _ = divergence_terms(field, path.points, path.grid.dt)
    return float(_sum_steps(terms))


def action_phase(field: FieldSpec, path: BrownianPath, path_ref: Any = None) -> ActionSample:
    phase, _ = phase_block(field, path.points, path.grid.dt)
    return ActionSample(float(phase), path_ref)


def coupled_step_terms(field: FieldSpec, geom: MirrorGeometry, X: np.ndarray, Y: np.ndarray,
                       tau_step: np.ndarray, dt: float) -> Dict[str, np.ndarray]:
    """
    Per-step pieces of the coupled action difference for a block of pairs.

    Parameters:
    X, Y: coupled path blocks of shape (n, n_steps + 1, d)
    tau_step: coupling step per pair (NOT_COUPLED if none)

    Returns:
    dict with per-step arrays term_x, term_y, m, i of shape (n, n_steps) and
    the clamp count; m and i vanish from the coupling step on
    """
    n_steps = X.shape[-2] - 1
    term_x, cx = phase_terms(field, X, dt)
    term_y, cy = phase_terms(field, Y, dt)
    k = np.arange(n_steps)
    before = (tau_step[:, None] == NOT_COUPLED) | (k[None, :] < tau_step[:, None])

    left = X[:, :-1, :]
    mirrored = geom.reflect(left)
    a_x, c1 = field.evaluate_vector(left)
    a_rx, c2 = field.evaluate_vector(mirrored)
    a_tilde = a_x - geom.linear_part(a_rx)
    m = np.einsum("nkd,nkd->nk", a_tilde, np.diff(X, axis=1))
    div_x, _ = field.evaluate_divergence(left)
    div_rx, _ = field.evaluate_divergence(mirrored)
    i = 0.5 * (div_x - div_rx) * dt
    m = np.where(before, m, 0.0)
    i = np.where(before, i, 0.0)
    return {"term_x": term_x, "term_y": term_y, "m": m, "i": i, "clamps": cx + cy + c1 + c2}


def decompose_block(field: FieldSpec, geom: MirrorGeometry, X: np.ndarray, Y: np.ndarray,
                    tau_step: np.ndarray, dt: float) -> Dict[str, np.ndarray]:
    """Per-pair phase_X, phase_Y, M, I and residual for a block of coupled pairs."""
    parts = coupled_step_terms(field, geom, X, Y, tau_step, dt)
    step_residual = (parts["term_x"] - parts["term_y"]) - (parts["m"] + parts["i"])
    return {
        "phase_X": _sum_steps(parts["term_x"]),
        "phase_Y": _sum_steps(parts["term_y"]),
        "M": _sum_steps(parts["m"]),
        "I": _sum_steps(parts["i"]),
        "residual": _sum_steps(step_residual),
        "clamps": np.array([parts["clamps"]]),
    }


def decompose_coupled_action(field: FieldSpec, coupled: CoupledPaths) -> ActionDecomposition:
    """
    Split the action difference of a coupled pair into M, I and a residual.

    M sums <A(X_k) - L A(R X_k), X_{k+1} - X_k> and I sums
    (div A(X_k) - div A(R X_k)) dt / 2 over the steps before coupling.
    """
    tau = np.array([NOT_COUPLED if coupled.tau_step is None else coupled.tau_step])
    out = decompose_block(field, coupled.geometry, coupled.X.points[None], coupled.Y.points[None],
                          tau, coupled.X.grid.dt)
    return ActionDecomposition(
        phase_X=float(out["phase_X"][0]),
        phase_Y=float(out["phase_Y"][0]),
        M=float(out["M"][0]),
        I=float(out["I"][0]),
        residual=float(out["residual"][0]),
    )
