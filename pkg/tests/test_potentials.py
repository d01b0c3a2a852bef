import dataclasses
import math

import numpy as np
import pytest

from kato_class import Integrand
from potentials import (FIELD_BUILDERS, ParticleConfig, build_field, constant_field_2d, constant_potential,
                        coulomb_potential, curl_2d, divergence_self_test, lift_field, lq_split_norm, smooth_bump,
                        uniform_vector_potential, zero_field)
from magnetic_action import FieldSpec


def test_particle_config_validation():
    with pytest.raises(ValueError):
        ParticleConfig(0)
    with pytest.raises(ValueError):
        ParticleConfig(1, ((0.0, 0.0, 0.0),), ())
    with pytest.raises(ValueError):
        ParticleConfig(1, ((0.0, 0.0, 0.0),), (-1.0,))
    with pytest.raises(ValueError):
        ParticleConfig(1, ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0)), (1.0, 1.0))
    config = ParticleConfig(2, ((0.0, 0.0, 0.0), (1.0, 0.0, 0.0)), (1.0, 2.0))
    assert config.l == 2
    assert config.dim == 6


def test_hydrogen_like_potential():
    field = coulomb_potential(ParticleConfig(1, ((0.0, 0.0, 0.0),), (1.0,)))
    values, clamps = field.evaluate_potential(np.array([[2.0, 0.0, 0.0], [0.0, 0.5, 0.0]]))
    assert np.allclose(values, [-0.5, -2.0])
    assert clamps == 0


def test_two_electron_potential_and_its_radial_terms():
    field = coulomb_potential(ParticleConfig(2, ((0.0, 0.0, 0.0),), (2.0,)))
    x = np.array([[1.0, 0.0, 0.0, 0.0, 2.0, 0.0]])
    values, _ = field.evaluate_potential(x)
    expected = -2.0 / 1.0 - 2.0 / 2.0 + 1.0 / math.sqrt(5.0)
    assert values[0] == pytest.approx(expected)
    rng = np.random.default_rng(0)
    points = rng.normal(size=(20, 6))
    from_terms = sum(term(points) for term in field.potential_terms)
    assert np.allclose(from_terms, field.evaluate_potential(points)[0])
    assert sorted(term.kappa for term in field.potential_terms) == [1.0, 1.0, 2.0]


def test_coulomb_singularity_is_clamped_and_counted():
    field = coulomb_potential(ParticleConfig(1, ((0.0, 0.0, 0.0),), (1.0,)), cap=100.0)
    values, clamps = field.evaluate_potential(np.array([[0.0, 0.0, 0.0], [1e-3, 0.0, 0.0], [1.0, 0.0, 0.0]]))
    assert clamps == 2
    assert np.allclose(values, [-100.0, -100.0, -1.0])


def test_coulomb_potential_is_translation_consistent():
    nuclei = ((1.0, 0.0, 0.0), (-1.0, 0.5, 0.0))
    shift = np.array([0.3, -2.0, 1.7])
    field = coulomb_potential(ParticleConfig(2, nuclei, (1.0, 2.0)))
    moved = coulomb_potential(ParticleConfig(2, tuple(tuple(np.add(r, shift)) for r in nuclei), (1.0, 2.0)))
    x = np.random.default_rng(4).normal(size=(200, 6))
    values, _ = field.evaluate_potential(x)
    shifted, _ = moved.evaluate_potential(x + np.tile(shift, 2))
    assert np.allclose(shifted, values, rtol=1e-12, atol=1e-12)


def test_summed_field_keeps_the_caps_and_radial_data_of_its_parts():
    coulomb = coulomb_potential(ParticleConfig(1, ((0.0, 0.0, 0.0),), (1.0,)), cap=10.0)
    uniform = uniform_vector_potential((1.0, 0.0, 0.0))
    total = uniform + coulomb
    assert total.v_cap == 10.0 and total.a_cap is None
    assert total.potential_terms == coulomb.potential_terms
    assert total.magnetic_profile == uniform.magnetic_profile
    assert total.params["charges"] == (1.0,) and total.params["vector"] == (1.0, 0.0, 0.0)
    values, clamps = total.evaluate_potential(np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]))
    assert clamps == 1
    assert np.allclose(values, [-10.0, -0.5])


def test_summed_vector_potentials_are_clamped_per_part():
    capped = dataclasses.replace(uniform_vector_potential((3.0, 0.0)), a_cap=1.0)
    total = capped + uniform_vector_potential((0.0, 1.0))
    assert total.a_cap is None and total.magnetic_profile is None
    values, _ = total.evaluate_vector(np.zeros((2, 2)))
    assert np.allclose(values, [[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(ValueError):
        total + zero_field(3)


def test_constant_field_has_constant_curl():
    field = constant_field_2d(1.5)
    points = np.random.default_rng(1).uniform(-2.0, 2.0, size=(30, 2))
    assert np.allclose(curl_2d(field, points), 1.5, atol=1e-6)
    assert divergence_self_test(field).passed
    assert field.locally_kato_only


def test_smooth_bump_is_bounded_divergence_free_and_compactly_supported():
    field = smooth_bump(2.0, 0.5, center=(1.0, -1.0))
    points = np.random.default_rng(2).uniform(-1.0, 3.0, size=(500, 2))
    values, _ = field.evaluate_vector(points)
    assert np.linalg.norm(values, axis=-1).max() <= 2.0 + 1e-12
    outside = np.linalg.norm(points - np.array([1.0, -1.0]), axis=-1) >= 0.5
    assert np.all(values[outside] == 0.0)
    assert divergence_self_test(field).passed
    assert np.all(np.isfinite(curl_2d(field, points)))


def test_smooth_bump_in_three_dimensions_rotates_first_two_axes():
    field = smooth_bump(1.0, 1.0, d=3)
    values, _ = field.evaluate_vector(np.array([[0.2, 0.1, 0.3]]))
    assert values[0, 2] == 0.0
    assert field.magnetic_profile is None
    assert divergence_self_test(field).passed


def test_smooth_bump_validation():
    with pytest.raises(ValueError):
        smooth_bump(1.0, 0.0)
    with pytest.raises(ValueError):
        smooth_bump(1.0, 1.0, d=1)
    with pytest.raises(ValueError):
        smooth_bump(1.0, 1.0, d=2, center=(0.0, 0.0, 0.0))


def test_divergence_self_test_catches_a_wrong_divergence():
    field = FieldSpec("wrong", 2, vector_potential=lambda p: p.copy(), divergence=lambda p: np.zeros(p.shape[0]))
    result = divergence_self_test(field, n_points=10)
    assert not result.passed
    assert result.max_error == pytest.approx(2.0, rel=1e-6)


def test_lifted_field_acts_blockwise():
    single = smooth_bump(1.0, 1.0, d=3)
    lifted = lift_field(single, 2)
    assert lifted.dim == 6
    x = np.array([[0.2, 0.1, 0.0, 5.0, 5.0, 5.0]])
    values, _ = lifted.evaluate_vector(x)
    first, _ = single.evaluate_vector(x[:, :3])
    assert np.allclose(values[0, :3], first[0])
    assert np.allclose(values[0, 3:], 0.0)
    assert lifted.divergence_vanishes
    assert len(lifted.candidates) == len(single.candidates)
    with pytest.raises(ValueError):
        lift_field(smooth_bump(1.0, 1.0, d=2), 2)


def test_simple_fields():
    field = uniform_vector_potential((1.0, -2.0))
    values, _ = field.evaluate_vector(np.zeros((3, 2)))
    assert np.allclose(values, [[1.0, -2.0]] * 3)
    v, _ = constant_potential(0.5, 2).evaluate_potential(np.ones((4, 2)))
    assert np.allclose(v, 0.5)
    zero = zero_field(3)
    assert not zero.has_vector_potential and not zero.has_potential


def test_split_norm_of_coulomb_above_level_one():
    report = lq_split_norm(Integrand.radial_power(3, -1.0), 2.0, 1.0)
    assert report.ls_norm == pytest.approx(math.sqrt(4.0 * math.pi), rel=1e-6)
    assert report.linf_bound <= 1.0 + 1e-9
    assert not report.diverged


@pytest.mark.parametrize("beta", [0.2, 0.5, 0.8])
def test_coulomb_split_is_finite_above_the_smoothing_exponent(beta):
    s_min = 3.0 / (2.0 * (1.0 - beta / 2.0))
    s = 0.5 * (s_min + 3.0)
    report = lq_split_norm(Integrand.radial_power(3, -1.0), s, 1.0)
    assert not report.diverged
    assert report.ls_norm == pytest.approx((4.0 * math.pi / (3.0 - s)) ** (1.0 / s), rel=1e-6)


def test_split_norm_diverges_at_the_critical_exponent():
    report = lq_split_norm(Integrand.radial_power(3, -1.0), 3.0, 1.0)
    assert report.diverged
    assert math.isinf(report.ls_norm)


def test_split_norm_of_constants_and_bad_arguments():
    assert lq_split_norm(Integrand.constant(2, 0.5), 2.0, 1.0).ls_norm == 0.0
    with pytest.raises(ValueError):
        lq_split_norm(Integrand.constant(2, 0.5), 0.5, 1.0)
    with pytest.raises(ValueError):
        lq_split_norm(Integrand.constant(2, 0.5), 2.0, 0.0)


def test_build_field_registry():
    assert {"zero", "smooth_bump", "constant_field_2d", "coulomb", "uniform"} <= set(FIELD_BUILDERS)
    field = build_field("smooth_bump", {"amplitude": 2.0, "radius": 1.0, "a_clamp": 0.5})
    assert field.a_cap == 0.5
    coulomb = build_field("coulomb", {"electrons": 1, "nuclei": ((0.0, 0.0, 0.0),), "charges": (1.0,),
                                      "clamp": 30.0})
    assert coulomb.v_cap == 30.0
    with pytest.raises(ValueError, match="unknown field"):
        build_field("nonexistent")
