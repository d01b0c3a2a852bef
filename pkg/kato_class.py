"""
Kato Class Numerics Module
Gaussian smoothings of potentials, the time-weighted Kato functional
sup_z int_0^t s^(-alpha/2) E_z|f(B_s)| ds, the magnetic constants built from it
and Monte Carlo exponential moments of path integrals.

Radially decomposable integrands are integrated against the exact law of
|P y - c| (a noncentral chi distribution); everything else uses tensor
Gauss-Hermite quadrature on the axes the integrand depends on.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from brownian_coupling import (McEstimate, TimeGrid, block_size_for, draw_increments,
                               map_path_blocks, paths_from_increments)
from magnetic_action import FieldSpec

logger = logging.getLogger(__name__)

DIVERGENCE_RATIO = 0.95
CENTRAL_LIMIT = 1e-6
MAX_TENSOR_POINTS = 2 ** 20
DEFAULT_EXPONENT_CEILING = 700.0


class QuadratureError(ArithmeticError):
    """Node doubling did not settle within tolerance."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class QuadratureSpec:
    """
    Quadrature resolution.

    nodes: Gauss nodes per radial cell / Hermite nodes per active axis
    time_nodes: Gauss-Legendre nodes per dyadic level of the time integral
    time_levels: number of dyadic levels [sqrt(t) 2^-k-1, sqrt(t) 2^-k]
    cutoff: radial cells span rho +- cutoff * sigma
    graded_cells: geometric cells between r = 0 and the first breakpoint
    """

    nodes: int = 16
    time_nodes: int = 6
    time_levels: int = 48
    tol: float = 1e-6
    max_doublings: int = 3
    cutoff: float = 12.0
    graded_cells: int = 24

    def __post_init__(self):
        if self.nodes < 2 or self.time_nodes < 2 or self.time_levels < 2:
            raise ValueError("quadrature needs at least 2 nodes and 2 time levels")
        if not self.tol > 0:
            raise ValueError(f"tolerance must be positive, got {self.tol}")

    def doubled(self) -> "QuadratureSpec":
        return dataclasses.replace(self, nodes=2 * self.nodes, time_nodes=2 * self.time_nodes)

    @property
    def breakpoints(self) -> np.ndarray:
        return self.cutoff * np.array([-1.0, -0.5, -0.25, -0.125, 0.0, 0.125, 0.25, 0.5, 1.0])


@dataclass(frozen=True)
class RadialTerm:
    """
    coefficient * profile(|P y - center|) with P P^T = kappa * I.

    profile=None stands for the constant 1; projection=None for the identity.
    A finite support means the profile vanishes for arguments beyond it.
    """

    coefficient: float
    profile: Optional[Callable[[np.ndarray], np.ndarray]]
    center: Tuple[float, ...]
    projection: Optional[np.ndarray] = None
    singular: bool = False
    support: Optional[float] = None
    kappa: float = field(init=False, default=1.0)

    def __post_init__(self):
        center = tuple(float(c) for c in np.atleast_1d(self.center))
        object.__setattr__(self, "center", center)
        if self.projection is not None:
            proj = np.array(self.projection, dtype=np.float64)
            gram = proj @ proj.T
            kappa = float(gram[0, 0])
            if proj.shape[0] != len(center) or not np.allclose(gram, kappa * np.eye(proj.shape[0]), atol=1e-12):
                raise ValueError("radial term projection must satisfy P P^T = kappa I with rows matching the center")
            proj.setflags(write=False)
            object.__setattr__(self, "projection", proj)
            object.__setattr__(self, "kappa", kappa)

    @property
    def rank(self) -> int:
        return len(self.center)

    def input_dim(self) -> int:
        return self.rank if self.projection is None else self.projection.shape[1]

    def offsets(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        w = z if self.projection is None else z @ self.projection.T
        return w - np.asarray(self.center)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(self.offsets(y), axis=-1)
        if self.profile is None:
            return np.full(r.shape, self.coefficient)
        return self.coefficient * self.profile(r)

    def lifted(self, selection: np.ndarray) -> "RadialTerm":
        base = np.eye(self.rank) if self.projection is None else self.projection
        return RadialTerm(self.coefficient, self.profile, self.center, base @ selection, self.singular,
                          self.support)


@dataclass(frozen=True)
class Integrand:
    """
    Non-negative integrand on R^dim for Gaussian smoothing.

    Exactly one representation is used: constant_value, a sum of radial terms,
    or a vectorized evaluator (m, dim) -> (m,) that only depends on `axes`.
    """

    dim: int
    evaluate: Optional[Callable[[np.ndarray], np.ndarray]] = None
    terms: Tuple[RadialTerm, ...] = ()
    axes: Optional[Tuple[int, ...]] = None
    label: str = ""
    candidates: Tuple[Tuple[float, ...], ...] = ()
    constant_value: Optional[float] = None

    def __post_init__(self):
        if self.constant_value is None and not self.terms and self.evaluate is None:
            raise ValueError("integrand needs a constant value, radial terms or an evaluator")
        for term in self.terms:
            if term.input_dim() != self.dim:
                raise ValueError(f"radial term acts on R^{term.input_dim()}, integrand lives on R^{self.dim}")
            if term.coefficient < 0:
                raise ValueError("integrand radial terms must have non-negative coefficients")
        if self.axes is None:
            object.__setattr__(self, "axes", tuple(range(self.dim)))

    @classmethod
    def constant(cls, dim: int, value: float, label: str = "") -> "Integrand":
        return cls(dim, constant_value=abs(float(value)), label=label or f"const {value:g}")

    @classmethod
    def radial_power(cls, dim: int, exponent: float, center=None, coefficient: float = 1.0) -> "Integrand":
        """|coefficient| * |y - center|^exponent."""
        center = tuple(np.zeros(dim)) if center is None else tuple(center)
        term = RadialTerm(abs(coefficient), lambda r: r ** exponent, center, singular=exponent < 0)
        return cls(dim, terms=(term,), label=f"|y|^{exponent:g}", candidates=(center,))

    @property
    def is_zero(self) -> bool:
        return self.constant_value == 0.0

    def __call__(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        if self.constant_value is not None:
            return np.full(y.shape[0], self.constant_value)
        if self.terms:
            return sum(term(y) for term in self.terms)
        return np.abs(np.asarray(self.evaluate(y), dtype=np.float64))

    def scaled(self, c: float) -> "Integrand":
        c = abs(float(c))
        if self.constant_value is not None:
            return dataclasses.replace(self, constant_value=c * self.constant_value)
        if self.terms:
            terms = tuple(dataclasses.replace(t, coefficient=c * t.coefficient) for t in self.terms)
            return dataclasses.replace(self, terms=terms)
        evaluate = self.evaluate
        return dataclasses.replace(self, evaluate=lambda y: c * evaluate(y))

    def lift(self, dim: int, indices: Sequence[int]) -> "Integrand":
        """
        Compose with the coordinate projection y -> y[indices] from R^dim.

        The Gaussian smoothing of the lifted integrand at z equals the
        smoothing of the original at z[indices].
        """
        indices = tuple(int(i) for i in indices)
        if len(indices) != self.dim or len(set(indices)) != self.dim or max(indices) >= dim:
            raise ValueError(f"indices {indices} do not select R^{self.dim} inside R^{dim}")
        selection = np.zeros((self.dim, dim))
        selection[np.arange(self.dim), indices] = 1.0

        def embed(point):
            full = np.zeros(dim)
            full[list(indices)] = point
            return tuple(full)

        candidates = tuple(embed(c) for c in self.candidates)
        label = f"{self.label} lifted to R^{dim}"
        if self.constant_value is not None:
            return Integrand(dim, constant_value=self.constant_value, label=label, candidates=candidates)
        if self.terms:
            return Integrand(dim, terms=tuple(t.lifted(selection) for t in self.terms),
                             label=label, candidates=candidates)
        base = self.evaluate
        idx = list(indices)
        return Integrand(dim, evaluate=lambda y: base(np.asarray(y)[:, idx]),
                         axes=tuple(indices[a] for a in self.axes), label=label, candidates=candidates)


@dataclass(frozen=True)
class KatoQuery:
    alpha: float
    t: float
    candidates: Tuple[Tuple[float, ...], ...]
    lattice: Optional[Tuple[Tuple[float, ...], float, int]] = None
    quad: QuadratureSpec = QuadratureSpec()

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0,1], got {self.alpha}")
        if not self.t > 0:
            raise ValueError(f"t must be positive, got {self.t}")
        if len(self.candidates) == 0:
            raise ValueError("candidate set must not be empty")
        object.__setattr__(self, "candidates", tuple(tuple(float(v) for v in c) for c in self.candidates))

    @classmethod
    def for_integrand(cls, f: Integrand, alpha: float, t: float, quad: Optional[QuadratureSpec] = None,
                      lattice=None) -> "KatoQuery":
        candidates = f.candidates or (tuple(np.zeros(f.dim)),)
        return cls(alpha, t, candidates, lattice, quad or QuadratureSpec())

    def points(self) -> np.ndarray:
        """Candidate points plus the optional lattice (center, half_width, points_per_axis)."""
        pts = [np.asarray(c) for c in self.candidates]
        if self.lattice is not None:
            center, half_width, n = self.lattice
            center = np.asarray(center, dtype=float)
            axis = np.linspace(-half_width, half_width, int(n))
            mesh = np.stack(np.meshgrid(*([axis] * center.size), indexing="ij"), axis=-1)
            pts.extend(mesh.reshape(-1, center.size) + center)
        return np.array(pts, dtype=np.float64)


@dataclass(frozen=True)
class KatoValue:
    value: float
    maximizer: Tuple[float, ...]
    error_estimate: float
    candidate_values: np.ndarray = field(repr=False, compare=False, default=None)


@dataclass(frozen=True)
class KatoProbe:
    """Kato functional along a decreasing t ladder."""

    alpha: float
    t_ladder: Tuple[float, ...]
    values: Tuple[KatoValue, ...]
    decay_exponent: float
    passes: bool


def _noncentral_chi_density(r, rho, sigma, k):
    """Density of |w + sigma G| for |w| = rho, G standard normal in R^k."""
    nu = k / 2.0 - 1.0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore", under="ignore"):
        central = rho < CENTRAL_LIMIT * sigma
        safe_rho = np.where(central, 1.0, rho)
        noncentral = (r / sigma ** 2) * (r / safe_rho) ** nu \
            * np.exp(-(r - safe_rho) ** 2 / (2.0 * sigma ** 2)) * special.ive(nu, r * safe_rho / sigma ** 2)
        log_chi = (k - 1) * np.log(r) - r ** 2 / (2.0 * sigma ** 2) - (k / 2.0 - 1.0) * math.log(2.0) \
            - special.gammaln(k / 2.0) - k * np.log(sigma)
        dens = np.where(central, np.exp(log_chi), noncentral)
    return np.where(r > 0, np.nan_to_num(dens, nan=0.0, posinf=0.0), 0.0)


def _radial_nodes(rho, sigma, quad: QuadratureSpec, support: Optional[float] = None):
    """
    Gauss-Legendre nodes/weights in r for every (rho, sigma) pair.

    Breakpoints are rho + sigma * b clipped at r >= 0, geometric points
    refining towards r = 0 and, for a profile with finite support, geometric
    points refining towards the support edge. Cells are consecutive sorted
    breakpoints.
    """
    x, w = special.roots_legendre(quad.nodes)
    grade = 2.0 ** -np.arange(1, quad.graded_cells + 1)
    pts = np.maximum(rho[..., None] + sigma[..., None] * quad.breakpoints, 0.0)
    first = np.where(pts > 0, pts, np.inf).min(axis=-1)
    first = np.where(np.isfinite(first), first, 0.0)
    extra = [pts, first[..., None] * grade, np.zeros(rho.shape + (1,))]
    if support is not None:
        edge = support * (1.0 - grade[: quad.graded_cells // 2])
        extra.append(np.broadcast_to(np.concatenate([edge, [support]]), rho.shape + (edge.size + 1,)))
    pts = np.sort(np.concatenate(extra, axis=-1), axis=-1)
    if support is not None:
        pts = np.minimum(pts, support)
    lo = pts[..., :-1, None]
    hi = pts[..., 1:, None]
    half = (hi - lo) / 2.0
    r = lo + half * (x + 1.0)
    weights = half * w
    return r, weights


def _radial_expectation(term: RadialTerm, z: np.ndarray, s: np.ndarray, quad: QuadratureSpec) -> np.ndarray:
    """E|term(z + sqrt(s) G)| for points z (m, d) and times s (n,) -> (m, n)."""
    rho = np.linalg.norm(term.offsets(z), axis=-1)
    if term.profile is None:
        return np.full((rho.size, s.size), abs(term.coefficient))
    sigma = np.sqrt(term.kappa * s)
    out = np.empty((rho.size, s.size))
    for i, rho_i in enumerate(rho):
        rho_b = np.full(s.size, rho_i)
        r, weights = _radial_nodes(rho_b, sigma, quad, term.support)
        dens = _noncentral_chi_density(r, rho_i, sigma[:, None, None], term.rank)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            prof = np.abs(term.profile(r))
            integrand = np.where(dens > 0, dens * prof, 0.0)
        out[i] = (integrand * weights).sum(axis=(-2, -1))
    return abs(term.coefficient) * out


def _hermite_expectation(f: Integrand, z: np.ndarray, s: np.ndarray, quad: QuadratureSpec) -> np.ndarray:
    x, w = special.roots_hermitenorm(quad.nodes)
    w = w / math.sqrt(2.0 * math.pi)
    k = len(f.axes)
    if quad.nodes ** k > MAX_TENSOR_POINTS:
        raise QuadratureError(f"tensor Gauss-Hermite rule on {k} active axes is too large",
                              {"nodes": quad.nodes, "active_axes": k})
    mesh = np.stack(np.meshgrid(*([x] * k), indexing="ij"), axis=-1).reshape(-1, k)
    weights = np.prod(np.stack(np.meshgrid(*([w] * k), indexing="ij"), axis=-1).reshape(-1, k), axis=-1)
    offsets = np.zeros((mesh.shape[0], f.dim))
    offsets[:, list(f.axes)] = mesh
    out = np.empty((z.shape[0], s.size))
    for i, zi in enumerate(z):
        y = zi + np.sqrt(s)[:, None, None] * offsets[None, :, :]
        vals = f(y.reshape(-1, f.dim)).reshape(s.size, -1)
        if not np.all(np.isfinite(vals)):
            raise QuadratureError(f"{f.label}: non-finite integrand value near z={zi}", {"z": zi})
        out[i] = vals @ weights
    return out


def _expectation_table(f: Integrand, z: np.ndarray, s: np.ndarray, quad: QuadratureSpec) -> np.ndarray:
    if f.constant_value is not None:
        return np.full((z.shape[0], s.size), f.constant_value)
    if f.terms:
        return sum(_radial_expectation(term, z, s, quad) for term in f.terms)
    return _hermite_expectation(f, z, s, quad)


def _relative_change(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    both_inf = np.isinf(a) & np.isinf(b)
    if np.any(np.isinf(a) != np.isinf(b)):
        return math.inf
    diff = np.where(both_inf, 0.0, np.abs(a - b))
    scale = np.where(both_inf, 1.0, np.maximum(np.abs(a), np.abs(b)))
    scale = max(float(np.max(scale)), 1e-300)
    return float(np.max(diff)) / scale


def _until_settled(compute: Callable[[QuadratureSpec], np.ndarray], quad: QuadratureSpec, label: str):
    """Double the nodes until two successive results agree to quad.tol."""
    previous = compute(quad)
    spec = quad
    history = []
    for _ in range(max(1, quad.max_doublings)):
        spec = spec.doubled()
        current = compute(spec)
        change = _relative_change(previous, current)
        history.append((spec.nodes, spec.time_nodes, change))
        if change < quad.tol:
            return current, float(np.max(np.abs(np.nan_to_num(current - previous, nan=0.0, posinf=0.0))))
        logger.info("%s: node doubling changed the result by %.3g, refining", label, change)
        previous = current
    raise QuadratureError(f"{label}: quadrature did not settle to {quad.tol:g}",
                          {"history": history, "last_value": np.asarray(previous).tolist()})


def gaussian_expectation(f: Integrand, z, s: float, quad: Optional[QuadratureSpec] = None) -> float:
    """
    Gaussian smoothing E|f(z + sqrt(s) G)| = (2 pi s)^(-d/2) int exp(-|z-y|^2 / 2s) |f(y)| dy.

    Parameters:
    f: Integrand
    z: position in R^dim
    s: time, positive
    quad: QuadratureSpec

    Returns:
    the smoothed value, accepted after a node-doubling check
    """
    if not s > 0:
        raise ValueError(f"s must be positive, got {s}")
    quad = quad or QuadratureSpec()
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    s_arr = np.array([float(s)])
    if f.constant_value is not None:
        return f.constant_value
    value, _ = _until_settled(lambda q: _expectation_table(f, z, s_arr, q), quad, f.label or "gaussian_expectation")
    return float(value[0, 0])


def _time_integral(f: Integrand, z: np.ndarray, t: float, alpha: float, quad: QuadratureSpec):
    """
    int_0^t s^(-alpha/2) E_z|f(B_s)| ds via s = r^2 on dyadic r-levels.

    Returns:
    (values per candidate, tail estimates); infinite where the level sums stop decaying
    """
    x, w = special.roots_legendre(quad.time_nodes)
    k = np.arange(quad.time_levels)
    b = math.sqrt(t) * 2.0 ** -k
    a = b / 2.0
    half = ((b - a) / 2.0)[:, None]
    r = a[:, None] + half * (x + 1.0)
    weights = half * w
    g = _expectation_table(f, z, (r ** 2).ravel(), quad).reshape(z.shape[0], *r.shape)
    levels = (2.0 * r ** (1.0 - alpha) * g * weights).sum(axis=-1)
    total = levels.sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = levels[:, -1] / levels[:, -2]
    ratio = np.nan_to_num(ratio, nan=0.0)
    diverged = (ratio >= DIVERGENCE_RATIO) & (levels[:, -1] > 0)
    safe = np.where(diverged, 0.0, ratio)
    tail = levels[:, -1] * safe / (1.0 - safe)
    values = np.where(diverged, np.inf, total + tail)
    return values, np.where(diverged, np.inf, np.abs(tail))


def kato_functional(f: Integrand, query: KatoQuery) -> KatoValue:
    """
    Kato functional at fixed t: max over candidates of int_0^t s^(-alpha/2) E_z|f(B_s)| ds.

    Parameters:
    f: Integrand
    query: KatoQuery

    Returns:
    KatoValue (value is inf when the s -> 0 end diverges)
    """
    z = query.points()
    if z.shape[1] != f.dim:
        raise ValueError(f"candidates live in R^{z.shape[1]}, integrand in R^{f.dim}")
    if f.constant_value is not None:
        value = f.constant_value * query.t ** (1.0 - query.alpha / 2.0) / (1.0 - query.alpha / 2.0)
        values = np.full(z.shape[0], value)
        return KatoValue(float(value), tuple(z[0]), 0.0, values)

    tails = {}

    def compute(spec):
        vals, tail = _time_integral(f, z, query.t, query.alpha, spec)
        tails["tail"] = tail
        return vals

    values, change = _until_settled(compute, query.quad, f.label or "kato_functional")
    best = int(np.argmax(values))
    error = change + float(np.max(tails["tail"]))
    logger.debug("kato functional %s alpha=%g t=%g -> %.6g at %s", f.label, query.alpha, query.t,
                 values[best], z[best])
    return KatoValue(float(values[best]), tuple(z[best]), error, values)


def kato_membership_probe(f: Integrand, alpha: float, t_ladder: Sequence[float],
                          candidates=None, quad: Optional[QuadratureSpec] = None) -> KatoProbe:
    """
    Evaluate the Kato functional along a strictly decreasing t ladder.

    The probe passes when every value is finite and the values decrease
    monotonically; decay_exponent is the log-log slope of value against t.
    """
    ladder = tuple(float(t) for t in t_ladder)
    if len(ladder) < 2 or any(b >= a for a, b in zip(ladder, ladder[1:])) or ladder[-1] <= 0:
        raise ValueError(f"t ladder must be strictly decreasing and positive, got {ladder}")
    values = []
    for t in ladder:
        query = KatoQuery.for_integrand(f, alpha, t, quad)
        if candidates is not None:
            query = dataclasses.replace(query, candidates=tuple(tuple(c) for c in candidates))
        values.append(kato_functional(f, query))
    v = np.array([kv.value for kv in values])
    finite = np.all(np.isfinite(v)) and np.all(v > 0)
    exponent = float(np.polyfit(np.log(ladder), np.log(v), 1)[0]) if finite else math.nan
    passes = bool(np.all(np.isfinite(v)) and np.all(np.diff(v) < 0) or np.all(v == 0))
    return KatoProbe(alpha, ladder, tuple(values), exponent, passes)


def magnetic_integrands(field: FieldSpec, q: float) -> Tuple[Integrand, Integrand]:
    """
    Integrands |A|^(2q) and |div A / 2|^q of a field.

    Returns:
    (vector-potential integrand, divergence integrand)
    """
    if not q > 1:
        raise ValueError(f"q must lie in (1, inf), got {q}")
    candidates = field.candidates or (tuple(np.zeros(field.dim)),)
    if not field.has_vector_potential:
        a_part = Integrand.constant(field.dim, 0.0, label="|A|^2q")
    elif field.magnetic_profile is not None:
        prof = field.magnetic_profile
        base = prof.profile
        term = dataclasses.replace(
            prof,
            coefficient=abs(prof.coefficient) ** (2 * q),
            profile=None if base is None else (lambda r: np.abs(base(r)) ** (2 * q)),
        )
        a_part = Integrand(field.dim, terms=(term,), label=f"|A|^{2 * q:g}", candidates=candidates)
    else:
        def a_power(y):
            a, _ = field.evaluate_vector(y)
            return np.linalg.norm(a, axis=-1) ** (2 * q)
        a_part = Integrand(field.dim, evaluate=a_power, axes=field.params.get("active_axes"),
                           label=f"|A|^{2 * q:g}", candidates=candidates)
    if field.divergence_vanishes:
        div_part = Integrand.constant(field.dim, 0.0, label="|divA/2|^q")
    else:
        def div_power(y):
            div, _ = field.evaluate_divergence(y)
            return np.abs(0.5 * div) ** q
        div_part = Integrand(field.dim, evaluate=div_power, axes=field.params.get("active_axes"),
                             label=f"|divA/2|^{q:g}", candidates=candidates)
    return a_part, div_part


def potential_integrand(field: FieldSpec) -> Integrand:
    """|V| as an integrand; mixed-sign radial decompositions give the triangle-inequality majorant."""
    candidates = field.candidates or (tuple(np.zeros(field.dim)),)
    if not field.has_potential:
        return Integrand.constant(field.dim, 0.0, label="|V|")
    terms = field.potential_terms
    if terms:
        signs = {np.sign(t.coefficient) for t in terms if t.coefficient != 0}
        label = "|V|"
        if len(signs) > 1:
            label = "|V| majorant"
            logger.info("%s: mixed-sign potential, using the sum of |terms| as a majorant of |V|", field.name)
        abs_terms = tuple(dataclasses.replace(t, coefficient=abs(t.coefficient)) for t in terms)
        return Integrand(field.dim, terms=abs_terms, label=label, candidates=candidates)

    def v_abs(y):
        v, _ = field.evaluate_potential(y)
        return np.abs(v)
    return Integrand(field.dim, evaluate=v_abs, axes=field.params.get("active_axes"), label="|V|",
                     candidates=candidates)


def magnetic_constant_terms(field: FieldSpec, t: float, q: float,
                            query: Optional[KatoQuery] = None) -> Tuple[float, float]:
    """
    The two summands of C(A, t, q).

    Returns:
    ((sup_z int_0^t E_z|A|^2q ds)^(1/q), (sup_z int_0^t E_z|div A / 2|^q ds)^(1/q))
    """
    a_part, div_part = magnetic_integrands(field, q)
    out = []
    for part in (a_part, div_part):
        if part.is_zero:
            out.append(0.0)
            continue
        if query is None:
            part_query = KatoQuery.for_integrand(part, 0.0, t)
        else:
            part_query = dataclasses.replace(query, alpha=0.0, t=t)
        out.append(kato_functional(part, part_query).value ** (1.0 / q))
    return out[0], out[1]


def magnetic_constant(field: FieldSpec, t: float, q: float, query: Optional[KatoQuery] = None) -> float:
    first, second = magnetic_constant_terms(field, t, q, query)
    return first + second


def dv_profile(field: FieldSpec, s: float, query: Optional[KatoQuery] = None) -> float:
    """sup over candidates of E_z|V(B_s)|."""
    if not s > 0:
        raise ValueError(f"s must be positive, got {s}")
    f = potential_integrand(field)
    if f.constant_value is not None:
        return f.constant_value
    points = (query or KatoQuery.for_integrand(f, 0.0, s)).points()
    quad = query.quad if query is not None else QuadratureSpec()
    values, _ = _until_settled(lambda spec: _expectation_table(f, points, np.array([float(s)]), spec),
                               quad, "dv_profile")
    return float(np.max(values))


def exp_moment(W: Callable[[np.ndarray], np.ndarray], t: float, z, n_paths: int, grid: TimeGrid,
               seed: int, ceiling: float = DEFAULT_EXPONENT_CEILING,
               workers: Optional[int] = None) -> McEstimate:
    """
    Monte Carlo estimate of E_z exp(int_0^t W(B_s) ds) with a left-point time sum.

    Parameters:
    W: vectorized scalar evaluator (m, d) -> (m,)
    t: horizon, must equal grid.t_end
    z: start point
    n_paths: number of paths
    grid: TimeGrid
    seed: global seed
    ceiling: per-path exponent cap; capped paths are counted as clamps

    Returns:
    McEstimate of the exponential moment
    """
    if abs(grid.t_end - t) > 1e-12 * max(1.0, t):
        raise ValueError(f"horizon t={t} does not match the grid end {grid.t_end}")
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    d = z.shape[0]

    def kernel(start, stop):
        increments, _ = draw_increments(seed, start, stop, grid, d)
        points = paths_from_increments(z, increments)[:, :-1, :]
        values = np.asarray(W(points.reshape(-1, d)), dtype=np.float64).reshape(stop - start, grid.n_steps)
        if not np.all(np.isfinite(values)):
            raise ValueError("W returned non-finite values along a path")
        exponent = values.astype(np.longdouble).sum(axis=-1).astype(np.float64) * grid.dt
        clamped = exponent > ceiling
        return {"value": np.exp(np.minimum(exponent, ceiling)), "clamped": clamped}

    out = map_path_blocks(kernel, n_paths, block_size_for(grid.n_steps, d), workers)
    clamps = int(out["clamped"].sum())
    if clamps:
        logger.warning("exp_moment: %d of %d path exponents hit the ceiling %g", clamps, n_paths, ceiling)
    return McEstimate.from_samples(out["value"], seed=seed, clamps=clamps, clamp_budget=n_paths)
