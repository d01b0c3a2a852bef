"""
Brownian Coupling Module
Samples Brownian paths on uniform time grids, builds mirror couplings of
Brownian motions and provides the exact coupling-time law used to check them.

All sampling is keyed by counter-based streams so that results do not depend
on how paths are spread over worker threads.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
import pandas as pd
from scipy import integrate, special, stats

logger = logging.getLogger(__name__)

# Largest number of float64 path coordinates held by one block of paths.
MAX_BLOCK_ELEMENTS = 2 ** 20
# Stream indices at or above this offset are reserved for independent partner paths.
INDEPENDENT_STREAM_OFFSET = 2 ** 62
# Marker for "never coupled on the horizon" in block arrays.
NOT_COUPLED = -1
N_BATCHES = 20


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k * dt on [0, t_end]."""

    t_end: float
    n_steps: int

    def __post_init__(self):
        if not math.isfinite(self.t_end) or self.t_end <= 0:
            raise ValueError(f"t_end must be a positive finite time, got {self.t_end}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @classmethod
    def from_dt(cls, t_end: float, dt: float) -> "TimeGrid":
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        return cls(t_end, max(1, int(round(t_end / dt))))

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def coarsen(self, factor: int) -> "TimeGrid":
        if self.n_steps % factor:
            raise ValueError(f"{self.n_steps} steps cannot be coarsened by {factor}")
        return TimeGrid(self.t_end, self.n_steps // factor)


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (global_seed, stream_index)."""

    global_seed: int
    stream_index: int

    def __post_init__(self):
        for name in ("global_seed", "stream_index"):
            value = getattr(self, name)
            if int(value) != value or not 0 <= value < 2 ** 64:
                raise ValueError(f"{name} must be an integer in [0, 2**64), got {value}")

    def generator(self) -> np.random.Generator:
        key = np.array([self.global_seed, self.stream_index], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def cell_seed(seed: int, *cell) -> int:
    """Derive an independent 64-bit seed for one experiment cell."""
    state = np.random.SeedSequence([int(seed), *[int(c) for c in cell]]).generate_state(1, np.uint64)
    return int(state[0])


@dataclass(frozen=True)
class BrownianPath:
    grid: TimeGrid
    points: np.ndarray

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[0] != self.grid.n_steps + 1:
            raise ValueError(
                f"points must have shape ({self.grid.n_steps + 1}, d), got {self.points.shape}"
            )

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.points, axis=0)


@dataclass(frozen=True)
class MirrorGeometry:
    """Bisecting hyperplane of the segment xy and the reflection across it."""

    x: np.ndarray
    y: np.ndarray
    midpoint: np.ndarray = field(init=False)
    unit_normal: np.ndarray = field(init=False)
    separation: float = field(init=False)

    def __post_init__(self):
        x = _frozen(self.x)
        y = _frozen(self.y)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError(f"x and y must be vectors of equal length, got {x.shape} and {y.shape}")
        separation = float(np.linalg.norm(x - y))
        if separation == 0.0:
            raise ValueError("mirror coupling needs distinct starting points (x == y given)")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "midpoint", _frozen((x + y) / 2.0))
        object.__setattr__(self, "unit_normal", _frozen((x - y) / separation))
        object.__setattr__(self, "separation", separation)

    @property
    def dim(self) -> int:
        return self.x.shape[0]

    def signed_distance(self, v) -> np.ndarray:
        return (np.asarray(v) - self.midpoint) @ self.unit_normal

    def linear_part(self, v) -> np.ndarray:
        """Apply L = I - 2 u u^T (reflection of differences)."""
        v = np.asarray(v, dtype=np.float64)
        return v - 2.0 * (v @ self.unit_normal)[..., None] * self.unit_normal

    def reflect(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        return v - 2.0 * self.signed_distance(v)[..., None] * self.unit_normal

    def matrix(self) -> np.ndarray:
        return np.eye(self.dim) - 2.0 * np.outer(self.unit_normal, self.unit_normal)


@dataclass(frozen=True)
class CoupledPaths:
    """A mirror-coupled pair; Y = R X before tau_step and Y = X from tau_step on."""

    geometry: MirrorGeometry
    X: BrownianPath
    Y: BrownianPath
    tau_step: Optional[int]
    bridge_crossed: np.ndarray

    @property
    def tau_time(self) -> Optional[float]:
        if self.tau_step is None:
            return None
        return self.tau_step * self.X.grid.dt

    def invariant_holds(self) -> bool:
        cut = self.X.grid.n_steps + 1 if self.tau_step is None else self.tau_step
        before = np.allclose(self.Y.points[:cut], self.geometry.reflect(self.X.points[:cut]), rtol=0, atol=1e-12)
        after = np.array_equal(self.Y.points[cut:], self.X.points[cut:])
        return bool(before and after)


@dataclass(frozen=True)
class McEstimate:
    """Monte Carlo mean with standard error, path count and provenance."""

    mean: complex | float
    std_error: float
    n: int
    clamps: int = 0
    seed: Optional[int] = None
    status: str = "ok"
    batch_means: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @classmethod
    def from_samples(cls, samples, seed=None, clamps=0, clamp_budget=None, clamp_warn_rate=0.01):
        """
        Summarize per-path samples.

        Parameters:
        samples: 1-D array of per-path values (real or complex), in path order
        seed: global seed that produced them
        clamps: number of clamped field evaluations behind the samples
        clamp_budget: number of field evaluations the clamp rate is measured against

        Returns:
        McEstimate with std_error = sample std / sqrt(n)
        """
        samples = np.ascontiguousarray(samples)
        n = samples.size
        if n == 0:
            raise ValueError("cannot summarize an empty sample")
        mean = samples.mean()
        if n > 1:
            dev = samples - mean
            var = float(np.sum((dev * np.conj(dev)).real) / (n - 1))
            std_error = math.sqrt(var / n)
        else:
            std_error = 0.0
        status = "ok"
        if clamp_budget and clamps / clamp_budget > clamp_warn_rate:
            status = "warning"
            logger.warning("clamp rate %.3g above %.3g (%d of %d evaluations)",
                           clamps / clamp_budget, clamp_warn_rate, clamps, clamp_budget)
        n_batches = min(N_BATCHES, n)
        batch_means = np.array([chunk.mean() for chunk in np.array_split(samples, n_batches)])
        mean = complex(mean) if np.iscomplexobj(samples) else float(mean)
        return cls(mean, std_error, n, int(clamps), seed, status, batch_means)

    def within(self, target, n_sigma: float = 3.0, atol: float = 1e-12) -> bool:
        return abs(self.mean - target) <= n_sigma * self.std_error + atol


def default_workers() -> int:
    return os.cpu_count() or 1


def block_size_for(n_steps: int, dim: int) -> int:
    """Paths per block; depends only on the path shape, never on the worker count."""
    return int(max(8, min(1024, MAX_BLOCK_ELEMENTS // ((n_steps + 1) * dim))))


def map_path_blocks(kernel: Callable[[int, int], Dict[str, np.ndarray]], n_paths: int,
                    block_size: int, workers: Optional[int] = None) -> Dict[str, np.ndarray]:
    """
    Run a block kernel over [0, n_paths) and join the per-path outputs in path order.

    Parameters:
    kernel: function (start, stop) -> dict of per-path arrays
    n_paths: total number of paths
    block_size: paths per block
    workers: thread count (None = all cores)

    Returns:
    dict of concatenated per-path arrays
    """
    if n_paths < 1:
        raise ValueError(f"n_paths must be at least 1, got {n_paths}")
    bounds = [(a, min(a + block_size, n_paths)) for a in range(0, n_paths, block_size)]
    workers = workers or default_workers()
    logger.debug("running %d paths in %d blocks on %d workers", n_paths, len(bounds), workers)
    if workers == 1 or len(bounds) == 1:
        results = [kernel(a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda ab: kernel(*ab), bounds))
    return {key: np.concatenate([r[key] for r in results]) for key in results[0]}


def draw_increments(seed: int, start: int, stop: int, grid: TimeGrid, dim: int,
                    n_uniform_rows: int = 0, index_offset: int = 0):
    """
    Draw Gaussian increments (and bridge uniforms) for paths start..stop-1.

    Each path consumes its own stream: n_steps*dim normals first, then
    n_uniform_rows rows of n_steps uniforms.

    Returns:
    increments of shape (n, n_steps, dim) with variance dt, and uniforms of
    shape (n_uniform_rows, n, n_steps)
    """
    n = stop - start
    increments = np.empty((n, grid.n_steps, dim))
    uniforms = np.empty((n_uniform_rows, n, grid.n_steps))
    for j in range(n):
        gen = RngStream(seed, index_offset + start + j).generator()
        increments[j] = gen.standard_normal((grid.n_steps, dim))
        for row in range(n_uniform_rows):
            uniforms[row, j] = gen.random(grid.n_steps)
    increments *= math.sqrt(grid.dt)
    return increments, uniforms


def paths_from_increments(start, increments: np.ndarray) -> np.ndarray:
    """Cumulate increments (..., n_steps, d) into points (..., n_steps + 1, d)."""
    start = np.asarray(start, dtype=np.float64)
    shape = increments.shape[:-2] + (increments.shape[-2] + 1, increments.shape[-1])
    points = np.empty(shape)
    points[..., 0, :] = start
    np.cumsum(increments, axis=-2, out=points[..., 1:, :])
    points[..., 1:, :] += start
    return points


def heat_kernel(t: float, a, b) -> float:
    """Transition density (2 pi t)^(-d/2) exp(-|a-b|^2 / (2t)) of Brownian motion."""
    if not t > 0:
        raise ValueError(f"heat kernel needs t > 0, got {t}")
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    d = a.shape[-1]
    dist2 = np.sum((a - b) ** 2, axis=-1)
    return (2.0 * math.pi * t) ** (-d / 2.0) * np.exp(-dist2 / (2.0 * t))


def sample_path(start, grid: TimeGrid, rng: RngStream) -> BrownianPath:
    start = np.atleast_1d(np.asarray(start, dtype=np.float64))
    increments, _ = draw_increments(rng.global_seed, rng.stream_index, rng.stream_index + 1,
                                    grid, start.shape[0])
    return BrownianPath(grid, paths_from_increments(start, increments)[0])


def reflect(geom: MirrorGeometry, v) -> np.ndarray:
    return geom.reflect(v)


def couple_block(geom: MirrorGeometry, grid: TimeGrid, X: np.ndarray, uniforms: np.ndarray,
                 bridge: bool = True):
    """
    Detect the first crossing of the mirror hyperplane and build the partner paths.

    A step k -> k+1 counts as crossing when the signed distance changes sign, or
    (same sign) when the bridge uniform falls below exp(-2 s_k s_{k+1} / dt).
    tau is put at the end of the crossing step; Y equals X from that grid point on.

    Parameters:
    X: block of paths from x, shape (n, n_steps + 1, d)
    uniforms: bridge uniforms, shape (n, n_steps)

    Returns:
    (Y, tau_step, bridge_hit) with tau_step = NOT_COUPLED where no crossing was seen
    """
    s = geom.signed_distance(X)
    s0, s1 = s[:, :-1], s[:, 1:]
    crossed = s1 <= 0.0
    if bridge:
        with np.errstate(over="ignore"):
            p_bridge = np.exp(np.minimum(-2.0 * s0 * s1 / grid.dt, 0.0))
        bridge_hit = ~crossed & (uniforms < p_bridge)
        crossed = crossed | bridge_hit
    else:
        bridge_hit = np.zeros_like(crossed)
    any_cross = crossed.any(axis=1)
    tau_step = np.where(any_cross, np.argmax(crossed, axis=1) + 1, NOT_COUPLED)
    k = np.arange(grid.n_steps + 1)
    after = any_cross[:, None] & (k[None, :] >= tau_step[:, None])
    Y = np.where(after[..., None], X, geom.reflect(X))
    return Y, tau_step, bridge_hit


def mirror_couple(geom: MirrorGeometry, grid: TimeGrid, rng: RngStream, bridge: bool = True) -> CoupledPaths:
    increments, uniforms = draw_increments(rng.global_seed, rng.stream_index, rng.stream_index + 1,
                                           grid, geom.dim, n_uniform_rows=1)
    X = paths_from_increments(geom.x, increments)
    Y, tau_step, bridge_hit = couple_block(geom, grid, X, uniforms[0], bridge)
    tau = int(tau_step[0])
    return CoupledPaths(
        geometry=geom,
        X=BrownianPath(grid, X[0]),
        Y=BrownianPath(grid, Y[0]),
        tau_step=None if tau == NOT_COUPLED else tau,
        bridge_crossed=bridge_hit[0],
    )


def coupling_survival_exact(t: float, delta: float) -> float:
    """P(tau > t) = erf(delta / (2 sqrt(2 t))) for a mirror coupling started delta apart."""
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    if delta < 0:
        raise ValueError(f"separation must be non-negative, got {delta}")
    return float(special.erf(delta / (2.0 * math.sqrt(2.0 * t))))


def coupling_survival_bound(t: float, delta: float) -> float:
    """Tail bound (2 pi)^(-1/2) delta t^(-1/2) on P(tau > t)."""
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    return delta / math.sqrt(2.0 * math.pi * t)


def total_variation_distance(t: float, x, y) -> float:
    """
    Half the L1 distance between the heat kernels started at x and y.

    The kernels differ only along the normal of the bisecting hyperplane, so
    the integral reduces to one dimension.
    """
    delta = float(np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)))
    if delta == 0.0:
        return 0.0
    sd = math.sqrt(t)

    def gap(w):
        return abs(stats.norm.pdf(w, loc=delta / 2, scale=sd) - stats.norm.pdf(w, loc=-delta / 2, scale=sd))

    width = delta / 2 + 12.0 * sd
    value, _ = integrate.quad(gap, -width, width, points=[0.0], limit=200, epsabs=1e-13, epsrel=1e-12)
    return 0.5 * value


def coupled_occupation(t: float, delta: float) -> float:
    """Expected time spent uncoupled, int_0^t P(s < tau) ds."""
    value, _ = integrate.quad(lambda s: coupling_survival_exact(s, delta) if s > 0 else 1.0 * (delta > 0),
                              0.0, t, limit=200)
    return value


def coupled_occupation_bound(t: float, delta: float) -> float:
    return math.sqrt(2.0 / math.pi) * delta * math.sqrt(t)


def _survival_kernel(geom, grid, seed, bridge):
    def kernel(start, stop):
        increments, uniforms = draw_increments(seed, start, stop, grid, geom.dim, n_uniform_rows=1)
        X = paths_from_increments(geom.x, increments)
        _, tau_step, _ = couple_block(geom, grid, X, uniforms[0], bridge)
        return {"tau_step": tau_step}
    return kernel


def simulate_coupling_times(geom: MirrorGeometry, grid: TimeGrid, n_paths: int, seed: int,
                            workers: Optional[int] = None, bridge: bool = True) -> np.ndarray:
    """Coupling step per path (NOT_COUPLED if the hyperplane was not crossed)."""
    out = map_path_blocks(_survival_kernel(geom, grid, seed, bridge), n_paths,
                          block_size_for(grid.n_steps, geom.dim), workers)
    return out["tau_step"]


def _survives(tau_step: np.ndarray, k: int) -> np.ndarray:
    return ((tau_step == NOT_COUPLED) | (tau_step > k)).astype(np.float64)


def maximality_deficit(geom: MirrorGeometry, grid: TimeGrid, n_paths: int, seed: int,
                       workers: Optional[int] = None) -> McEstimate:
    """|empirical P(tau >= t_end) - erf(delta / (2 sqrt(2 t_end)))| with its standard error."""
    tau_step = simulate_coupling_times(geom, grid, n_paths, seed, workers)
    survival = McEstimate.from_samples(_survives(tau_step, grid.n_steps), seed=seed)
    exact = coupling_survival_exact(grid.t_end, geom.separation)
    return McEstimate(abs(survival.mean - exact), survival.std_error, n_paths, 0, seed)


def survival_curve(geom: MirrorGeometry, grid: TimeGrid, n_paths: int, seed: int,
                   n_times: int = 5, workers: Optional[int] = None) -> pd.DataFrame:
    """
    Empirical coupling-time survival at evenly spaced grid times.

    Returns:
    DataFrame with columns t, survival, survival_se, exact, bound, z_score
    """
    tau_step = simulate_coupling_times(geom, grid, n_paths, seed, workers)
    steps = sorted({max(1, int(round(grid.n_steps * j / n_times))) for j in range(1, n_times + 1)})
    rows = []
    for k in steps:
        t = k * grid.dt
        est = McEstimate.from_samples(_survives(tau_step, k))
        exact = coupling_survival_exact(t, geom.separation)
        z = (est.mean - exact) / est.std_error if est.std_error > 0 else 0.0
        rows.append({"t": t, "survival": est.mean, "survival_se": est.std_error, "exact": exact,
                     "bound": coupling_survival_bound(t, geom.separation), "z_score": z})
    return pd.DataFrame(rows, columns=["t", "survival", "survival_se", "exact", "bound", "z_score"])
