import math

import numpy as np
import pytest
from scipy import special

from brownian_coupling import (NOT_COUPLED, McEstimate, MirrorGeometry, RngStream, TimeGrid, block_size_for,
                               cell_seed, coupled_occupation, coupled_occupation_bound, coupling_survival_bound,
                               coupling_survival_exact, draw_increments, heat_kernel, map_path_blocks,
                               maximality_deficit, mirror_couple, sample_path, simulate_coupling_times,
                               survival_curve, total_variation_distance)


def test_time_grid_rounds_dt_and_rejects_bad_horizons():
    grid = TimeGrid.from_dt(1.0, 1e-3)
    assert grid.n_steps == 1000
    assert grid.times[-1] == pytest.approx(1.0)
    assert grid.coarsen(10).n_steps == 100
    with pytest.raises(ValueError):
        TimeGrid(0.0, 10)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)
    with pytest.raises(ValueError):
        grid.coarsen(7)


def test_rng_streams_are_reproducible_and_distinct():
    a = RngStream(42, 7).generator().standard_normal(5)
    b = RngStream(42, 7).generator().standard_normal(5)
    c = RngStream(42, 8).generator().standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert cell_seed(42, 0, 1) != cell_seed(42, 1, 0)
    with pytest.raises(ValueError):
        RngStream(-1, 0)


def test_increments_have_variance_dt():
    grid = TimeGrid(1.0, 50)
    increments, uniforms = draw_increments(3, 0, 400, grid, 2, n_uniform_rows=1)
    assert increments.shape == (400, 50, 2)
    assert uniforms.shape == (1, 400, 50)
    assert increments.var() == pytest.approx(grid.dt, rel=0.05)
    assert 0.0 <= uniforms.min() and uniforms.max() < 1.0


def test_mirror_geometry_reflection_swaps_endpoints():
    geom = MirrorGeometry(np.array([1.0, 2.0, 0.0]), np.array([-1.0, 0.5, 3.0]))
    assert np.allclose(geom.reflect(geom.x), geom.y)
    assert np.allclose(geom.reflect(geom.y), geom.x)
    v = np.array([0.3, -1.2, 2.2])
    assert np.allclose(geom.linear_part(geom.linear_part(v)), v)
    L = geom.matrix()
    assert np.allclose(L @ L.T, np.eye(3))
    assert np.allclose(L, L.T)
    assert geom.signed_distance(geom.midpoint) == pytest.approx(0.0)


def test_mirror_geometry_requires_distinct_points():
    with pytest.raises(ValueError):
        MirrorGeometry(np.zeros(2), np.zeros(2))


def test_heat_kernel_values():
    assert heat_kernel(1.0, [0.0], [0.0]) == pytest.approx(1.0 / math.sqrt(2.0 * math.pi))
    assert heat_kernel(2.0, [0.0, 0.0], [1.0, 1.0]) == pytest.approx(math.exp(-0.5) / (4.0 * math.pi))
    with pytest.raises(ValueError):
        heat_kernel(0.0, [0.0], [0.0])


@pytest.mark.parametrize("index", range(10))
def test_coupled_pair_is_reflection_then_identical(index):
    geom = MirrorGeometry(np.array([0.25, 0.0]), np.array([-0.25, 0.0]))
    grid = TimeGrid(1.0, 200)
    coupled = mirror_couple(geom, grid, RngStream(5, index))
    assert coupled.invariant_holds()
    assert np.allclose(coupled.Y.start, geom.y)
    if coupled.tau_step is not None:
        assert coupled.tau_time == pytest.approx(coupled.tau_step * grid.dt)
        assert np.array_equal(coupled.X.points[-1], coupled.Y.points[-1])


def test_sample_path_matches_coupled_driver():
    geom = MirrorGeometry(np.array([1.0]), np.array([-1.0]))
    grid = TimeGrid(0.5, 20)
    path = sample_path(geom.x, grid, RngStream(9, 3))
    coupled = mirror_couple(geom, grid, RngStream(9, 3))
    assert np.array_equal(path.points, coupled.X.points)


def test_survival_closed_form_and_tail_bound():
    assert coupling_survival_exact(1.0, 0.0) == 0.0
    for t in (0.05, 0.25, 1.0, 4.0, 16.0):
        for delta in (0.1, 0.5, 1.0, 2.0):
            assert coupling_survival_exact(t, delta) <= coupling_survival_bound(t, delta)
    assert coupling_survival_exact(1.0, 1.0) == pytest.approx(special.erf(1.0 / (2.0 * math.sqrt(2.0))))
    with pytest.raises(ValueError):
        coupling_survival_exact(0.0, 1.0)


@pytest.mark.parametrize("t,delta", [(0.25, 1.0), (1.0, 1.0), (2.0, 0.3)])
def test_total_variation_equals_coupling_survival(t, delta):
    x = np.array([delta, 0.0, 0.0])
    assert total_variation_distance(t, x, np.zeros(3)) == pytest.approx(coupling_survival_exact(t, delta),
                                                                         abs=1e-8)


def test_coupled_occupation_is_below_its_bound():
    assert coupled_occupation(1.0, 0.0) == 0.0
    for t, delta in ((0.5, 0.2), (1.0, 1.0), (3.0, 0.5)):
        value = coupled_occupation(t, delta)
        assert 0.0 < value <= coupled_occupation_bound(t, delta)
        assert value <= t


def test_empirical_survival_matches_closed_form():
    geom = MirrorGeometry(np.array([0.5, 0.0]), np.array([-0.5, 0.0]))
    grid = TimeGrid(1.0, 500)
    table = survival_curve(geom, grid, 8000, seed=21, n_times=4)
    assert list(table.columns) == ["t", "survival", "survival_se", "exact", "bound", "z_score"]
    assert table["z_score"].abs().max() < 4.0
    assert (table["exact"] <= table["bound"]).all()


def test_bridge_correction_only_adds_crossings():
    geom = MirrorGeometry(np.array([0.2]), np.array([-0.2]))
    grid = TimeGrid(1.0, 20)
    with_bridge = simulate_coupling_times(geom, grid, 2000, seed=4, bridge=True)
    without = simulate_coupling_times(geom, grid, 2000, seed=4, bridge=False)
    hit = without != NOT_COUPLED
    assert np.all(with_bridge[hit] != NOT_COUPLED)
    assert np.all(with_bridge[hit] <= without[hit])
    assert (with_bridge == NOT_COUPLED).mean() < (without == NOT_COUPLED).mean()


def test_coupling_times_do_not_depend_on_worker_count():
    geom = MirrorGeometry(np.array([0.5]), np.array([-0.5]))
    grid = TimeGrid(1.0, 100)
    assert block_size_for(grid.n_steps, 1) < 3000
    serial = simulate_coupling_times(geom, grid, 3000, seed=8, workers=1)
    threaded = simulate_coupling_times(geom, grid, 3000, seed=8, workers=4)
    assert np.array_equal(serial, threaded)


def test_map_path_blocks_keeps_path_order():
    out = map_path_blocks(lambda a, b: {"index": np.arange(a, b)}, 100, 7, workers=3)
    assert np.array_equal(out["index"], np.arange(100))
    with pytest.raises(ValueError):
        map_path_blocks(lambda a, b: {}, 0, 7)


def test_maximality_deficit_is_small():
    geom = MirrorGeometry(np.array([0.5, 0.0, 0.0]), np.array([-0.5, 0.0, 0.0]))
    deficit = maximality_deficit(geom, TimeGrid(0.5, 250), 6000, seed=2)
    assert deficit.mean <= 4.0 * deficit.std_error + 1e-3


def test_mc_estimate_summary_and_clamp_warning():
    est = McEstimate.from_samples(np.array([1.0, 2.0, 3.0, 4.0]), seed=1)
    assert est.mean == pytest.approx(2.5)
    assert est.std_error == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2.0)
    assert est.status == "ok"
    assert est.within(2.5 + est.std_error)
    warned = McEstimate.from_samples(np.ones(10), clamps=5, clamp_budget=100)
    assert warned.status == "warning"
    complex_est = McEstimate.from_samples(np.array([1j, -1j]))
    assert complex_est.mean == 0
    assert complex_est.std_error == pytest.approx(1.0)
    with pytest.raises(ValueError):
        McEstimate.from_samples(np.array([]))


@pytest.mark.slow
@pytest.mark.parametrize("t", [0.25, 1.0, 4.0])
def test_mirror_coupling_is_maximal_at_acceptance_scale(t):
    geom = MirrorGeometry(np.array([1.0, 0.0, 0.0]), np.zeros(3))
    grid = TimeGrid.from_dt(t, 1e-3)
    tau_step = simulate_coupling_times(geom, grid, 100_000, seed=1)
    survival = McEstimate.from_samples(((tau_step == NOT_COUPLED)).astype(float))
    assert survival.within(coupling_survival_exact(t, 1.0), n_sigma=3.0)
