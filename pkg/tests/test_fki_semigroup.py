import math

import numpy as np
import pytest
from scipy import stats

from brownian_coupling import TimeGrid
from fki_semigroup import (INITIAL_FUNCTIONS, InitialFunction, SemigroupQuery, check_eigenfunction, coupling_lhs,
                           coupling_rhs, eigen_residual, evaluate, evaluate_pair_difference, hamiltonian_apply,
                           holder_norm_bound)
from potentials import constant_field_2d, constant_potential, smooth_bump, uniform_vector_potential, zero_field


def test_initial_function_registry_and_closed_forms():
    assert set(INITIAL_FUNCTIONS) == {"constant", "gaussian", "half_space", "landau", "ramp"}
    psi = InitialFunction.gaussian(1.0)
    assert psi(np.zeros((1, 2)))[0] == 1.0
    assert psi.heat_flow(1.0, np.zeros(1))[0] == pytest.approx(math.sqrt(0.5))
    half = InitialFunction.half_space()
    assert half.heat_flow(0.25, np.array([[0.5]]))[0] == pytest.approx(stats.norm.cdf(1.0))
    assert InitialFunction.ramp(scale=2.0).lipschitz == 0.5


def test_heat_semigroup_of_gaussian():
    grid = TimeGrid(1.0, 1)
    psi = InitialFunction.gaussian(1.0)
    points = np.array([[0.0], [1.0], [2.0]])
    estimates = evaluate(SemigroupQuery(zero_field(1), 1.0, points, psi, 20_000, grid, seed=5))
    for x, est in zip(points[:, 0], estimates):
        exact = (1.0 / math.sqrt(2.0)) * math.exp(-x ** 2 / 4.0)
        assert est.within(exact, n_sigma=4.0), f"x={x}: {est.mean} vs {exact} (se {est.std_error})"


def test_constant_potential_damps_by_exp_minus_vt():
    grid = TimeGrid(1.0, 10)
    psi = InitialFunction.constant(1.0)
    est = evaluate(SemigroupQuery(constant_potential(0.5, 2), 1.0, np.zeros((1, 2)), psi, 200, grid, seed=1))[0]
    assert est.mean == pytest.approx(math.exp(-0.5), rel=1e-12)


def test_uniform_vector_potential_gives_gaussian_characteristic_function():
    grid = TimeGrid(1.0, 20)
    est = evaluate(SemigroupQuery(uniform_vector_potential((1.0, 0.0)), 1.0, np.zeros((1, 2)),
                                  InitialFunction.constant(1.0), 20_000, grid, seed=2))[0]
    assert est.within(math.exp(-0.5), n_sigma=4.0)
    assert abs(est.mean.imag) < 4.0 * est.std_error


def test_query_validation():
    grid = TimeGrid(1.0, 10)
    psi = InitialFunction.constant()
    with pytest.raises(ValueError):
        SemigroupQuery(zero_field(2), 0.5, np.zeros((1, 2)), psi, 100, grid)
    with pytest.raises(ValueError):
        SemigroupQuery(zero_field(2), 1.0, np.zeros((1, 3)), psi, 100, grid)
    with pytest.raises(ValueError):
        SemigroupQuery(zero_field(2), 1.0, np.zeros((1, 2)), psi, 1, grid)


def test_evaluation_is_reproducible_across_worker_counts():
    grid = TimeGrid(0.5, 50)
    field = smooth_bump(1.0, 1.0)
    psi = InitialFunction.gaussian(1.0)
    points = np.array([[0.1, 0.2], [0.5, -0.3]])
    a = evaluate(SemigroupQuery(field, 0.5, points, psi, 3000, grid, seed=9, workers=1))
    b = evaluate(SemigroupQuery(field, 0.5, points, psi, 3000, grid, seed=9, workers=4))
    assert [e.mean for e in a] == [e.mean for e in b]


def test_landau_ground_state_is_an_eigenfunction():
    field = constant_field_2d(1.0)
    psi = InitialFunction.landau_ground_state(1.0)
    points = np.array([[0.0, 0.0], [1.0, 0.0], [0.3, -0.7]])
    h_psi = hamiltonian_apply(field, psi, points)
    assert np.allclose(h_psi, 0.5 * psi(points), atol=1e-6)
    rel, passed = check_eigenfunction(field, psi, 0.5, points)
    assert passed and rel < 1e-4
    _, wrong = check_eigenfunction(field, psi, 0.6, points)
    assert not wrong


def test_landau_eigen_residual_is_small():
    field = constant_field_2d(1.0)
    psi = InitialFunction.landau_ground_state(1.0)
    grid = TimeGrid.from_dt(0.5, 2e-3)
    residuals = eigen_residual(field, psi, 0.5, 0.5, np.array([[0.0, 0.0], [1.0, 0.0]]), 20_000, grid, seed=4)
    for est in residuals:
        assert est.mean <= 4.0 * est.std_error + 0.01


def test_coupled_pair_difference_matches_heat_flow_and_beats_independent_pairs():
    grid = TimeGrid(0.5, 250)
    psi = InitialFunction.half_space()
    x, y = np.array([0.1]), np.array([-0.1])
    coupled = evaluate_pair_difference(zero_field(1), 0.5, x, y, psi, 8000, grid, seed=3)
    exact = float(psi.heat_flow(0.5, x)[0] - psi.heat_flow(0.5, y)[0])
    assert coupled.difference.within(exact, n_sigma=4.0)
    assert coupled.phase_term.mean == 0.0
    assert coupled.rough_term.mean >= abs(coupled.difference.mean) - 1e-12
    independent = evaluate_pair_difference(zero_field(1), 0.5, x, y, psi, 8000, grid, seed=3, independent=True)
    assert independent.uncoupled_fraction == 1.0
    assert coupled.difference.std_error ** 2 <= 0.5 * independent.difference.std_error ** 2


@pytest.mark.parametrize("delta", [0.1, 0.2])
@pytest.mark.parametrize("t", [0.25, 1.0])
def test_coupling_reduces_variance_under_a_smooth_bump(delta, t):
    field = smooth_bump(1.0, 1.0)
    grid = TimeGrid(t, 100)
    psi = InitialFunction.half_space()
    x, y = np.array([0.5 * delta, 0.0]), np.array([-0.5 * delta, 0.0])
    coupled = evaluate_pair_difference(field, t, x, y, psi, 4000, grid, seed=21)
    independent = evaluate_pair_difference(field, t, x, y, psi, 4000, grid, seed=21, independent=True)
    assert coupled.phase_term.mean > 0.0
    assert coupled.difference.std_error ** 2 <= 0.5 * independent.difference.std_error ** 2


def test_coupling_lhs_vanishes_without_field_and_for_orthogonal_uniform_field():
    grid = TimeGrid(1.0, 100)
    x, y = np.array([0.5, 0.0]), np.array([-0.5, 0.0])
    assert coupling_lhs(zero_field(2), 1.0, x, y, 500, grid, seed=1).mean == 0.0
    lhs = coupling_lhs(uniform_vector_potential((0.0, 1.0)), 1.0, x, y, 500, grid, seed=1)
    assert lhs.mean == pytest.approx(0.0, abs=1e-10)


def test_coupling_lhs_is_bounded_by_two():
    grid = TimeGrid(1.0, 100)
    lhs = coupling_lhs(uniform_vector_potential((3.0, 0.0)), 1.0, np.array([0.5, 0.0]), np.array([-0.5, 0.0]),
                       500, grid, seed=2)
    assert 0.0 < lhs.mean <= 2.0


def test_coupling_rhs_for_uniform_field():
    rhs = coupling_rhs(uniform_vector_potential((3.0, 4.0)), 0.5, 2.0, c0=2.0)
    assert rhs == pytest.approx(2.0 * 25.0 * 0.5 ** 0.5 * 0.5 ** -0.25, rel=1e-5)
    with pytest.raises(ValueError):
        coupling_rhs(zero_field(2), 1.0, 1.0)
    with pytest.raises(ValueError):
        coupling_rhs(zero_field(2), 1.0, 2.0, c0=0.0)


def test_holder_norm_bound_for_free_motion():
    t, beta, c0, c_v = 0.8, 0.5, 1.5, 0.3
    bound = holder_norm_bound(zero_field(2), beta, t, math.inf, math.inf, c0, c_v)
    expected = c_v * math.exp(c_v * t) + c0 * (t / 2.0) ** (-beta / 2.0) * c_v * math.exp(c_v * t / 2.0)
    assert bound == pytest.approx(expected)


def test_holder_norm_bound_grows_with_potential_and_validates():
    free = holder_norm_bound(zero_field(2), 0.5, 1.0, 2.0, math.inf)
    damped = holder_norm_bound(constant_potential(1.0, 2), 0.5, 1.0, 2.0, math.inf)
    assert 0.0 < free < damped < math.inf
    with pytest.raises(ValueError):
        holder_norm_bound(zero_field(2), 1.0, 1.0, 2.0, 4.0)
    with pytest.raises(ValueError):
        holder_norm_bound(zero_field(2), 0.5, 1.0, 4.0, 2.0)


@pytest.mark.slow
def test_heat_semigroup_at_acceptance_scale():
    grid = TimeGrid(1.0, 1)
    points = np.array([[0.0], [1.0], [2.0]])
    estimates = evaluate(SemigroupQuery(zero_field(1), 1.0, points, InitialFunction.gaussian(1.0), 100_000, grid,
                                        seed=6))
    for x, est in zip(points[:, 0], estimates):
        assert est.within(math.exp(-x ** 2 / 4.0) / math.sqrt(2.0), n_sigma=3.0)


@pytest.mark.slow
def test_landau_eigen_residual_at_acceptance_scale():
    field = constant_field_2d(1.0)
    psi = InitialFunction.landau_ground_state(1.0)
    grid = TimeGrid.from_dt(0.5, 1e-3)
    points = np.array([[0.0, 0.0], [1.0, 0.0]])
    residuals = eigen_residual(field, psi, 0.5, 0.5, points, 1_000_000, grid, seed=17)
    expected = math.exp(-0.25) * psi(points)
    for est, target in zip(residuals, expected):
        assert est.mean <= 3.0 * est.std_error + 2e-3
        assert est.mean / abs(target) < 0.02
