"""
Potentials Module
Fields with exact metadata: molecular Coulomb potentials, lifted one-particle
vector potentials, the constant 2-D magnetic field and smooth compactly
supported test bumps, together with finite-difference self tests and the
L^s + L^inf split check.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special

from kato_class import Integrand, QuadratureSpec, RadialTerm
from magnetic_action import FieldSpec

logger = logging.getLogger(__name__)

DEFAULT_COULOMB_CAP = 1e8
SPLIT_LEVELS = 60
SPLIT_DIVERGENCE_RATIO = 0.99
R_MIN = 1e-12
R_MAX = 1e6


@dataclass(frozen=True)
class ParticleConfig:
    """n electrons in R^3 and nuclei at fixed positions with charges Z_j >= 0."""

    n: int
    nuclei: Tuple[Tuple[float, float, float], ...] = ()
    charges: Tuple[float, ...] = ()

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"electron count must be a positive integer, got {self.n}")
        nuclei = tuple(tuple(float(v) for v in r) for r in self.nuclei)
        charges = tuple(float(z) for z in self.charges)
        if any(len(r) != 3 for r in nuclei):
            raise ValueError("nucleus positions must be points in R^3")
        if len(nuclei) != len(charges):
            raise ValueError(f"{len(nuclei)} nuclei but {len(charges)} charges")
        if any(z < 0 for z in charges):
            raise ValueError(f"charges must be non-negative, got {charges}")
        if len(set(nuclei)) != len(nuclei):
            raise ValueError("nuclei must be pairwise distinct")
        object.__setattr__(self, "nuclei", nuclei)
        object.__setattr__(self, "charges", charges)

    @property
    def l(self) -> int:
        return len(self.nuclei)

    @property
    def dim(self) -> int:
        return 3 * self.n


@dataclass(frozen=True)
class SplitReport:
    threshold: float
    ls_norm: float
    linf_bound: float
    s: float
    partial_value: float = 0.0
    diverged: bool = False


@dataclass(frozen=True)
class SelfTestResult:
    max_error: float
    tolerance: float
    n_points: int

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def _block(i: int, n: int) -> np.ndarray:
    """3 x 3n matrix selecting particle i."""
    sel = np.zeros((3, 3 * n))
    sel[:, 3 * i:3 * i + 3] = np.eye(3)
    return sel


def _inverse(r):
    with np.errstate(divide="ignore"):
        return 1.0 / r


def coulomb_potential(config: ParticleConfig, cap: Optional[float] = DEFAULT_COULOMB_CAP) -> FieldSpec:
    """
    Molecular Coulomb potential on R^{3n}.

    V(x) = - sum_i sum_j Z_j / |x_i - R_j| + sum_{i<j} 1 / |x_i - x_j|

    Parameters:
    config: ParticleConfig
    cap: clamp for |V| (evaluations at a singularity return +-cap and are counted)

    Returns:
    FieldSpec carrying only V, with one radial term per Coulomb pair
    """
    n = config.n
    nuclei = np.array(config.nuclei, dtype=np.float64).reshape(-1, 3)
    charges = np.array(config.charges, dtype=np.float64)

    def potential(x):
        electrons = x.reshape(-1, n, 3)
        value = np.zeros(electrons.shape[0])
        with np.errstate(divide="ignore", invalid="ignore"):
            for j in range(config.l):
                dist = np.linalg.norm(electrons - nuclei[j], axis=-1)
                value = value - charges[j] * _inverse(dist).sum(axis=-1)
            for i in range(n):
                for k in range(i + 1, n):
                    value = value + _inverse(np.linalg.norm(electrons[:, i] - electrons[:, k], axis=-1))
        return value

    terms = []
    for j in range(config.l):
        for i in range(n):
            terms.append(RadialTerm(-charges[j], _inverse, nuclei[j], _block(i, n), singular=True))
    for i in range(n):
        for k in range(i + 1, n):
            terms.append(RadialTerm(1.0, _inverse, (0.0, 0.0, 0.0), _block(i, n) - _block(k, n), singular=True))

    candidates = [tuple(np.zeros(3 * n))]
    candidates += [tuple(np.tile(r, n)) for r in nuclei]
    return FieldSpec(
        name="coulomb",
        dim=3 * n,
        potential=potential,
        v_cap=cap,
        potential_terms=tuple(terms),
        candidates=tuple(dict.fromkeys(candidates)),
        params={"electrons": n, "nuclei": config.nuclei, "charges": config.charges,
                "beta_range": (0.0, 1.0)},
        notes="V in L^s + L^inf for every s < 3, hence beta-Kato suitable for every beta in (0,1)",
    )


def lift_single_particle(a: Callable[[np.ndarray], np.ndarray], div_a: Optional[Callable[[np.ndarray], np.ndarray]],
                         n: int, name: str = "lifted", candidates: Sequence[Sequence[float]] = (),
                         a_cap: Optional[float] = None) -> FieldSpec:
    """
    Lift a one-particle vector potential a on R^3 to A = sum_i a o pi_i on R^{3n}.

    Block i of A(x) is a(x_i) and div A(x) = sum_i div a(x_i).
    """
    if int(n) != n or n < 1:
        raise ValueError(f"particle count must be a positive integer, got {n}")

    def vector_potential(x):
        blocks = x.reshape(-1, 3)
        return np.asarray(a(blocks), dtype=np.float64).reshape(x.shape)

    divergence = None
    if div_a is not None:
        def divergence(x):
            blocks = x.reshape(-1, 3)
            return np.asarray(div_a(blocks), dtype=np.float64).reshape(x.shape[0], n).sum(axis=-1)

    lifted_candidates = tuple(tuple(np.tile(np.asarray(c, dtype=float), n)) for c in candidates)
    return FieldSpec(
        name=name if n == 1 else f"{name}x{n}",
        dim=3 * n,
        vector_potential=vector_potential,
        divergence=divergence,
        a_cap=a_cap,
        candidates=lifted_candidates,
        divergence_vanishes=div_a is None,
        params={"particles": n, "single_vector_potential": a, "single_divergence": div_a},
    )


def lift_field(field: FieldSpec, n: int) -> FieldSpec:
    """Lift a vector-potential field on R^3 to n particles."""
    if field.dim != 3:
        raise ValueError(f"only fields on R^3 can be lifted, got R^{field.dim}")
    return lift_single_particle(field.vector_potential, field.divergence, n, name=field.name,
                                candidates=field.candidates, a_cap=field.a_cap)


def constant_field_2d(B: float) -> FieldSpec:
    """
    Symmetric gauge A(x) = (-B x_2 / 2, B x_1 / 2) of a constant magnetic field B.

    |A|^2q grows at infinity, so the field is only locally Kato; experiments
    keep to bounded windows around the origin.
    """
    B = float(B)

    def vector_potential(x):
        return 0.5 * B * np.stack([-x[:, 1], x[:, 0]], axis=-1)

    return FieldSpec(
        name="constant_field_2d",
        dim=2,
        vector_potential=vector_potential,
        magnetic_profile=RadialTerm(abs(B) / 2.0, lambda r: r, (0.0, 0.0)),
        candidates=((0.0, 0.0),),
        divergence_vanishes=True,
        locally_kato_only=True,
        params={"B": B, "window": 3.0},
        notes="only locally Kato: |A| grows linearly, use bounded evaluation windows",
    )


def bump_profile(rho):
    """exp(1 - 1/(1 - rho^2)) on rho < 1, zero outside; equals 1 at rho = 0."""
    rho = np.asarray(rho, dtype=np.float64)
    inside = rho < 1.0
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        value = np.exp(1.0 - 1.0 / (1.0 - np.where(inside, rho, 0.0) ** 2))
    return np.where(inside, value, 0.0)


def smooth_bump(amplitude: float, radius: float, d: int = 2, center=None) -> FieldSpec:
    """
    Compactly supported rotational field A(x) = (amplitude/radius) psi(|x-c|/radius) J(x-c).

    J rotates the first two coordinates, J v = (-v_2, v_1, 0, ..., 0), so
    div A vanishes identically and |A| <= amplitude.
    """
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if d < 2:
        raise ValueError(f"smooth_bump needs d >= 2, got {d}")
    amplitude = float(amplitude)
    radius = float(radius)
    c = np.zeros(d) if center is None else np.asarray(center, dtype=np.float64)
    if c.shape != (d,):
        raise ValueError(f"center must lie in R^{d}, got shape {c.shape}")

    def vector_potential(x):
        v = x - c
        rho = np.linalg.norm(v, axis=-1) / radius
        out = np.zeros_like(v)
        scale = (amplitude / radius) * bump_profile(rho)
        out[:, 0] = -scale * v[:, 1]
        out[:, 1] = scale * v[:, 0]
        return out

    profile = None
    if d == 2:
        profile = RadialTerm(abs(amplitude), lambda r: (r / radius) * bump_profile(r / radius),
                             tuple(c), support=radius)
    e1 = np.eye(d)[0]
    candidates = tuple(tuple(c + radius * (j / 20.0) * e1) for j in range(21))
    return FieldSpec(
        name="smooth_bump",
        dim=d,
        vector_potential=vector_potential,
        magnetic_profile=profile,
        candidates=candidates,
        divergence_vanishes=True,
        params={"amplitude": amplitude, "radius": radius, "center": tuple(c), "window": 1.5 * radius},
    )


def uniform_vector_potential(c) -> FieldSpec:
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))
    d = c.shape[0]
    return FieldSpec(
        name="uniform",
        dim=d,
        vector_potential=lambda x: np.broadcast_to(c, x.shape).copy(),
        magnetic_profile=RadialTerm(float(np.linalg.norm(c)), None, tuple(np.zeros(d))),
        candidates=(tuple(np.zeros(d)),),
        divergence_vanishes=True,
        params={"vector": tuple(c)},
    )


def constant_potential(value: float, dim: int) -> FieldSpec:
    value = float(value)
    return FieldSpec(
        name="constant_potential",
        dim=dim,
        potential=lambda x: np.full(x.shape[0], value),
        potential_terms=(RadialTerm(value, None, tuple(np.zeros(dim))),),
        candidates=(tuple(np.zeros(dim)),),
        params={"value": value},
    )


def zero_field(dim: int) -> FieldSpec:
    return FieldSpec(name="zero", dim=dim, candidates=(tuple(np.zeros(dim)),))


def _sample_points(field: FieldSpec, n_points: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    center = np.asarray(field.params.get("center", np.zeros(field.dim)), dtype=float)
    window = float(field.params.get("window", 2.0))
    return center + rng.uniform(-window, window, size=(n_points, field.dim))


def divergence_self_test(field: FieldSpec, n_points: int = 100, h: float = 1e-5, rel_tol: float = 1e-5,
                         seed: int = 0, points=None) -> SelfTestResult:
    """
    Compare the analytic div A with central differences at random points.

    Returns:
    SelfTestResult with the largest discrepancy and the tolerance rel_tol * max(1, |div A|)
    """
    pts = _sample_points(field, n_points, seed) if points is None else np.atleast_2d(points)
    numeric = np.zeros(pts.shape[0])
    for i in range(field.dim):
        step = np.zeros(field.dim)
        step[i] = h
        plus, _ = field.evaluate_vector(pts + step)
        minus, _ = field.evaluate_vector(pts - step)
        numeric += (plus[:, i] - minus[:, i]) / (2.0 * h)
    analytic, _ = field.evaluate_divergence(pts)
    scale = max(1.0, float(np.max(np.abs(analytic))))
    result = SelfTestResult(float(np.max(np.abs(numeric - analytic))), rel_tol * scale, pts.shape[0])
    logger.debug("%s divergence self test: max error %.3g (tol %.3g)", field.name, result.max_error, result.tolerance)
    return result


def curl_2d(field: FieldSpec, points, h: float = 1e-5) -> np.ndarray:
    """Central-difference curl d_1 A_2 - d_2 A_1 of a planar field."""
    if field.dim != 2:
        raise ValueError(f"curl_2d needs a planar field, got R^{field.dim}")
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    e1, e2 = np.array([h, 0.0]), np.array([0.0, h])
    a_p1, _ = field.evaluate_vector(pts + e1)
    a_m1, _ = field.evaluate_vector(pts - e1)
    a_p2, _ = field.evaluate_vector(pts + e2)
    a_m2, _ = field.evaluate_vector(pts - e2)
    return (a_p1[:, 1] - a_m1[:, 1]) / (2.0 * h) - (a_p2[:, 0] - a_m2[:, 0]) / (2.0 * h)


def _sphere_area(k: int) -> float:
    return 2.0 * math.pi ** (k / 2.0) / special.gamma(k / 2.0)


def _radial_superlevel(g: Callable[[np.ndarray], np.ndarray], threshold: float):
    """Intervals of r in (R_MIN, R_MAX) where g(r) > threshold, endpoints refined by brentq."""
    r = np.geomspace(R_MIN, R_MAX, 4001)
    above = g(r) > threshold
    intervals = []
    start = None
    for i, flag in enumerate(above):
        if flag and start is None:
            start = R_MIN if i == 0 else optimize.brentq(lambda x: g(np.array([x]))[0] - threshold, r[i - 1], r[i])
        if not flag and start is not None:
            end = optimize.brentq(lambda x: g(np.array([x]))[0] - threshold, r[i - 1], r[i])
            intervals.append((start, end))
            start = None
    if start is not None:
        intervals.append((start, R_MAX))
    return intervals, float(np.max(np.where(above, 0.0, g(r)), initial=0.0))


def _radial_power_integral(h: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, touches_zero: bool,
                           nodes: int):
    """int_lo^hi h(r) dr; when the interval reaches r = 0 use dyadic levels and flag divergence."""
    x, w = special.roots_legendre(nodes)
    if not touches_zero:
        edges = np.geomspace(max(lo, R_MIN), hi, 33)
        a, b = edges[:-1, None], edges[1:, None]
        r = a + (b - a) * (x + 1.0) / 2.0
        return float(np.sum(h(r) * (b - a) / 2.0 * w)), False
    k = np.arange(SPLIT_LEVELS)
    b = (hi * 2.0 ** -k)[:, None]
    a = b / 2.0
    r = a + (b - a) * (x + 1.0) / 2.0
    levels = np.sum(h(r) * (b - a) / 2.0 * w, axis=-1)
    total = float(levels.sum())
    ratio = levels[-1] / levels[-2] if levels[-2] > 0 else 0.0
    if ratio >= SPLIT_DIVERGENCE_RATIO:
        return total, True
    return total + levels[-1] * ratio / (1.0 - ratio), False


def lq_split_norm(f: Integrand, s: float, threshold: float, quad: Optional[QuadratureSpec] = None,
                  window: float = 10.0) -> SplitReport:
    """
    Split f = f 1{|f| > c} + f 1{|f| <= c} and measure the L^s norm of the first part.

    Parameters:
    f: Integrand (single radial term, constant, or evaluator on a bounded window)
    s: exponent >= 1
    threshold: the level c
    quad: quadrature resolution
    window: half-width of the box used for evaluator integrands

    Returns:
    SplitReport; ls_norm is inf when the integral diverges, partial_value then holds the partial integral
    """
    if s < 1:
        raise ValueError(f"s must be at least 1, got {s}")
    if not threshold > 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    quad = quad or QuadratureSpec()
    if f.constant_value is not None:
        if f.constant_value <= threshold:
            return SplitReport(threshold, 0.0, f.constant_value, s)
        return SplitReport(threshold, math.inf, 0.0, s, math.inf, True)

    if len(f.terms) == 1 and f.terms[0].projection is None and f.terms[0].profile is not None:
        term = f.terms[0]
        k = term.rank

        def g(r):
            return np.abs(term.coefficient * term.profile(r))

        intervals, sup_rest = _radial_superlevel(g, threshold)
        total, diverged = 0.0, False
        for lo, hi in intervals:
            if hi >= R_MAX:
                diverged = True
                continue
            part, div = _radial_power_integral(lambda r: g(r) ** s * r ** (k - 1), lo, hi, lo <= R_MIN, quad.nodes)
            total += part
            diverged = diverged or div
        total *= _sphere_area(k)
        linf = min(threshold, sup_rest) if intervals else sup_rest
        if diverged:
            logger.info("L^%g norm of the part of %s above %g diverges", s, f.label, threshold)
            return SplitReport(threshold, math.inf, linf, s, total, True)
        return SplitReport(threshold, total ** (1.0 / s), linf, s, total)

    if f.dim > 3:
        raise ValueError("box quadrature of the split norm is limited to dimension 3")
    x, w = special.roots_legendre(4 * quad.nodes)
    x, w = window * x, window * w
    mesh = np.stack(np.meshgrid(*([x] * f.dim), indexing="ij"), axis=-1).reshape(-1, f.dim)
    weights = np.prod(np.stack(np.meshgrid(*([w] * f.dim), indexing="ij"), axis=-1).reshape(-1, f.dim), axis=-1)
    values = f(mesh)
    above = values > threshold
    total = float(np.sum(np.where(above, values, 0.0) ** s * weights))
    linf = float(np.max(np.where(above, 0.0, values)))
    if not math.isfinite(total):
        return SplitReport(threshold, math.inf, linf, s, total, True)
    return SplitReport(threshold, total ** (1.0 / s), linf, s, total)


FIELD_BUILDERS: Dict[str, Callable[..., FieldSpec]] = {}


def _register(name):
    def wrap(fn):
        FIELD_BUILDERS[name] = fn
        return fn
    return wrap


@_register("zero")
def _build_zero(params):
    return zero_field(int(params.get("dim", 2)))


@_register("smooth_bump")
def _build_bump(params):
    d = int(params.get("dim", 2))
    return smooth_bump(params.get("amplitude", 1.0), params.get("radius", 1.0), d, params.get("center"))


@_register("lifted_bump")
def _build_lifted_bump(params):
    base = smooth_bump(params.get("amplitude", 1.0), params.get("radius", 1.0), 3, params.get("center"))
    return lift_field(base, int(params.get("electrons", 1)))


@_register("constant_field_2d")
def _build_constant_field(params):
    return constant_field_2d(params.get("B", 1.0))


@_register("uniform")
def _build_uniform(params):
    return uniform_vector_potential(params.get("vector", (1.0, 0.0)))


@_register("constant_potential")
def _build_constant_potential(params):
    return constant_potential(params.get("value", 1.0), int(params.get("dim", 1)))


@_register("coulomb")
def _build_coulomb(params):
    config = ParticleConfig(int(params.get("electrons", 1)), tuple(params.get("nuclei", ())),
                            tuple(params.get("charges", ())))
    return coulomb_potential(config, params.get("clamp", DEFAULT_COULOMB_CAP))


def build_field(name: str, params: Optional[Dict[str, Any]] = None) -> FieldSpec:
    """Build a shipped field from its registry name and parameters."""
    params = dict(params or {})
    if name not in FIELD_BUILDERS:
        raise ValueError(f"unknown field '{name}', expected one of {sorted(FIELD_BUILDERS)}")
    field = FIELD_BUILDERS[name](params)
    if params.get("a_clamp") is not None:
        field = replace(field, a_cap=float(params["a_clamp"]))
    return field
