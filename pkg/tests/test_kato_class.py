import math

import numpy as np
import pytest
from scipy import special

from brownian_coupling import TimeGrid
from kato_class import (Integrand, KatoQuery, QuadratureError, QuadratureSpec, RadialTerm, dv_profile, exp_moment,
                        gaussian_expectation, kato_functional, kato_membership_probe, magnetic_constant,
                        magnetic_constant_terms, magnetic_integrands, potential_integrand)
from magnetic_action import FieldSpec
from potentials import ParticleConfig, constant_potential, coulomb_potential, smooth_bump, uniform_vector_potential

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def coulomb_integrand():
    return Integrand.radial_power(3, -1.0)


@pytest.mark.parametrize("z,s", [((1.0, 0.0, 0.0), 0.5), ((0.3, -0.4, 1.2), 2.0), ((0.0, 0.0, 5.0), 0.1)])
def test_gaussian_smoothing_of_coulomb_matches_closed_form(z, s):
    r = np.linalg.norm(z)
    expected = special.erf(r / math.sqrt(2.0 * s)) / r
    assert gaussian_expectation(coulomb_integrand(), np.array(z), s) == pytest.approx(expected, rel=1e-5)


def test_gaussian_smoothing_of_coulomb_at_the_singularity():
    assert gaussian_expectation(coulomb_integrand(), np.zeros(3), 0.5) == pytest.approx(
        SQRT_2_OVER_PI / math.sqrt(0.5), rel=1e-5)


@pytest.mark.parametrize("alpha,expected", [(0.0, 2.0 * SQRT_2_OVER_PI), (0.5, 4.0 * SQRT_2_OVER_PI)])
def test_kato_functional_of_coulomb(alpha, expected):
    f = coulomb_integrand()
    value = kato_functional(f, KatoQuery.for_integrand(f, alpha, 1.0))
    assert value.value == pytest.approx(expected, rel=0.01)
    assert np.allclose(value.maximizer, 0.0)


def test_kato_functional_maximizer_picks_the_singularity():
    f = coulomb_integrand()
    query = KatoQuery(0.0, 1.0, ((2.0, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 1.0, 0.0)))
    value = kato_functional(f, query)
    assert value.maximizer == (0.0, 0.0, 0.0)
    assert value.candidate_values[0] < value.candidate_values[2] < value.candidate_values[1]


def test_inverse_square_is_not_kato_in_three_dimensions():
    f = Integrand.radial_power(3, -2.0)
    assert math.isinf(kato_functional(f, KatoQuery.for_integrand(f, 0.0, 1.0)).value)


def test_constant_integrand_closed_form():
    f = Integrand.constant(2, 3.0)
    for alpha in (0.0, 0.5, 1.0):
        value = kato_functional(f, KatoQuery.for_integrand(f, alpha, 0.5)).value
        assert value == pytest.approx(3.0 * 0.5 ** (1.0 - alpha / 2.0) / (1.0 - alpha / 2.0))


def test_lifted_integrand_smooths_like_the_original():
    f = coulomb_integrand()
    lifted = f.lift(6, (3, 4, 5))
    z = np.array([7.0, -2.0, 1.0, 0.5, 0.0, 0.0])
    assert gaussian_expectation(lifted, z, 0.3) == pytest.approx(gaussian_expectation(f, z[3:], 0.3), rel=1e-8)
    assert lifted.candidates == ((0.0, 0.0, 0.0, 0.0, 0.0, 0.0),)
    with pytest.raises(ValueError):
        f.lift(4, (0, 1, 4))


def test_radial_term_projection_must_be_scaled_orthonormal():
    with pytest.raises(ValueError):
        RadialTerm(1.0, None, (0.0, 0.0), projection=np.array([[1.0, 0.0], [1.0, 1.0]]))
    term = RadialTerm(1.0, None, (0.0, 0.0, 0.0), projection=np.hstack([np.eye(3), -np.eye(3)]))
    assert term.kappa == pytest.approx(2.0)


def test_membership_probe_on_coulomb_decays_like_square_root():
    probe = kato_membership_probe(coulomb_integrand(), 0.0, (1.0, 0.5, 0.25, 0.125))
    assert probe.passes
    assert probe.decay_exponent == pytest.approx(0.5, abs=0.02)


def test_membership_probe_fails_for_inverse_square():
    probe = kato_membership_probe(Integrand.radial_power(3, -2.0), 0.0, (1.0, 0.5))
    assert not probe.passes
    assert math.isnan(probe.decay_exponent)


def test_membership_probe_needs_decreasing_ladder():
    with pytest.raises(ValueError):
        kato_membership_probe(coulomb_integrand(), 0.0, (0.5, 1.0))


def test_unsettled_quadrature_raises_with_diagnostics():
    f = Integrand(1, evaluate=lambda y: np.sqrt(np.abs(y[:, 0])), label="sqrt|y|")
    with pytest.raises(QuadratureError) as info:
        gaussian_expectation(f, np.zeros(1), 1.0, QuadratureSpec(tol=1e-14, max_doublings=1))
    assert "history" in info.value.diagnostics


def test_uniform_vector_potential_magnetic_constant():
    field = uniform_vector_potential((3.0, 4.0))
    first, second = magnetic_constant_terms(field, 0.5, 2.0)
    assert first == pytest.approx(25.0 * math.sqrt(0.5), rel=1e-5)
    assert second == 0.0


def test_magnetic_constant_of_a_linear_field():
    field = FieldSpec("linear", 2, vector_potential=lambda p: p.copy(), divergence=lambda p: np.full(p.shape[0], 2.0))
    first, second = magnetic_constant_terms(field, 1.0, 2.0)
    assert first == pytest.approx(math.sqrt(8.0 / 3.0), rel=1e-6)
    assert second == pytest.approx(1.0, rel=1e-6)


def test_magnetic_constant_scales_term_by_term():
    field = FieldSpec("linear", 2, vector_potential=lambda p: p.copy(), divergence=lambda p: np.full(p.shape[0], 2.0))
    first, second = magnetic_constant_terms(field, 1.0, 2.0)
    first2, second2 = magnetic_constant_terms(field.scaled(2.0), 1.0, 2.0)
    assert first2 == pytest.approx(4.0 * first, rel=1e-6)
    assert second2 == pytest.approx(2.0 * second, rel=1e-6)


def test_smooth_bump_magnetic_constant_is_finite_and_scales():
    field = smooth_bump(1.0, 1.0)
    c1 = magnetic_constant(field, 1.0, 2.0)
    c2 = magnetic_constant(field.scaled(2.0), 1.0, 2.0)
    assert 0.0 < c1 < math.inf
    assert c2 == pytest.approx(4.0 * c1, rel=1e-6)
    a_part, div_part = magnetic_integrands(field, 2.0)
    assert div_part.is_zero
    assert a_part.terms[0].support == 1.0


def test_coulomb_potential_integrand_and_dv_profile():
    field = coulomb_potential(ParticleConfig(1, ((0.0, 0.0, 0.0),), (1.0,)))
    f = potential_integrand(field)
    assert f.label == "|V|"
    assert dv_profile(field, 0.5) == pytest.approx(SQRT_2_OVER_PI / math.sqrt(0.5), rel=1e-5)
    assert dv_profile(constant_potential(-2.0, 3), 0.1) == pytest.approx(2.0)


def test_mixed_sign_coulomb_uses_a_majorant():
    field = coulomb_potential(ParticleConfig(2, ((0.0, 0.0, 0.0),), (2.0,)))
    f = potential_integrand(field)
    assert f.label == "|V| majorant"
    assert all(t.coefficient > 0 for t in f.terms)


def test_exp_moment_of_constant_potential():
    grid = TimeGrid(1.0, 10)
    est = exp_moment(lambda y: np.full(y.shape[0], 0.7), 1.0, np.zeros(2), 100, grid, seed=1)
    assert est.mean == pytest.approx(math.exp(0.7))
    assert est.std_error == pytest.approx(0.0, abs=1e-12)


def test_exp_moment_ceiling_is_counted():
    grid = TimeGrid(1.0, 10)
    est = exp_moment(lambda y: np.full(y.shape[0], 1000.0), 1.0, np.zeros(1), 50, grid, seed=1)
    assert est.clamps == 50
    assert est.status == "warning"
    assert est.mean == pytest.approx(math.exp(700.0))


def test_exp_moment_of_bounded_kato_potential_is_finite():
    grid = TimeGrid(0.5, 200)
    W = lambda y: np.minimum(1.0 / np.linalg.norm(y, axis=-1), 50.0)
    est = exp_moment(W, 0.5, np.zeros(3), 2000, grid, seed=3)
    assert 1.0 < est.mean < math.exp(0.5 * 50.0)
    with pytest.raises(ValueError):
        exp_moment(W, 1.0, np.zeros(3), 10, grid, seed=3)


def test_exp_moment_matches_the_mehler_formula():
    # E exp(-int_0^t B_s^2 ds) = cosh(sqrt(2) t)^(-1/2) in one dimension
    grid = TimeGrid(0.5, 500)
    est = exp_moment(lambda y: -np.sum(y ** 2, axis=-1), 0.5, np.zeros(1), 20000, grid, seed=9)
    assert est.within(math.cosh(math.sqrt(2.0) * 0.5) ** -0.5, n_sigma=4.0, atol=2e-3)
