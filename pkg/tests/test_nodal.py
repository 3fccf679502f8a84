import math

import numpy as np
import pytest

from choquard.models.equation import energy, first_variation_pair
from choquard.models.errors import DegenerateInputError, UnsupportedConfigurationError, UnsupportedRegimeError
from choquard.models.nehari import default_initial_field, groundstate_solve
from choquard.models.nodal import (
    cross_gagliardo,
    cross_gagliardo_pairwise,
    dipole_initial_field,
    domination_check,
    energy_nonsplitting,
    maximize_phi,
    nodal_residuals,
    phi,
    phi_coefficients,
    phi_concavity_check,
    project_nodal,
    signchanging_solve,
    split_parts,
)
from choquard.models.spectral_core import Field, gaussian_field, lp_norm, make_grid


def test_split_of_sine_wave():
    grid = make_grid(2, 16, 8.0)
    u = Field.from_function(grid, lambda x, y: np.sin(2 * math.pi * x / 8.0) + 0 * y)
    split = split_parts(u)
    assert np.array_equal(split.plus.values + split.minus.values, u.values)
    assert not np.any(split.plus.values * split.minus.values)
    assert split.plus.values.min() >= 0 and split.minus.values.max() <= 0
    assert split.nontrivial


def test_split_is_odd(dipole_1d):
    assert np.array_equal(split_parts(-dipole_1d).plus.values, -split_parts(dipole_1d).minus.values)


def test_split_of_positive_field(positive_field):
    split = split_parts(positive_field)
    assert split.minus.is_zero()
    assert not split.nontrivial
    assert cross_gagliardo(split, 0.5) == 0.0


def test_cross_term_matches_double_sum():
    grid = make_grid(1, 32, 8.0)
    u = gaussian_field(grid, 0.8, [-1.5]) - 0.7 * gaussian_field(grid, 0.6, [1.5])
    split = split_parts(u)
    spectral = cross_gagliardo(split, 0.6)
    direct = cross_gagliardo_pairwise(split, 0.6)
    assert spectral <= 0
    assert direct == pytest.approx(spectral, rel=1e-8)


def test_pairwise_cross_term_refuses_large_grids():
    grid = make_grid(3, 32, 16.0)
    u = Field.from_function(grid, lambda x, y, z: np.where(x < 0, 1.0, -1.0) + 0 * y + 0 * z)
    with pytest.raises(UnsupportedConfigurationError):
        cross_gagliardo_pairwise(split_parts(u), 0.5)


def test_coefficients_reconstruct_energy(dipole_1d, nodal_params_1d, rng):
    coeffs = phi_coefficients(dipole_1d, nodal_params_1d)
    assert min(coeffs.a2, coeffs.a3, coeffs.a4, coeffs.b2, coeffs.b3, coeffs.b4) >= 0
    split = split_parts(dipole_1d)
    for tau0, theta0 in rng.uniform(0.2, 2.0, size=(10, 2)):
        direct = energy(split.recombine(tau0, theta0), nodal_params_1d).total
        assert coeffs.energy_at(tau0, theta0) == pytest.approx(direct, rel=1e-10)


def test_phi_matches_coefficients(dipole_1d, nodal_params_1d, rng):
    coeffs = phi_coefficients(dipole_1d, nodal_params_1d)
    for tau, theta in rng.uniform(0.1, 5.0, size=(10, 2)):
        assert phi(dipole_1d, tau, theta, nodal_params_1d) == pytest.approx(coeffs.value(tau, theta), rel=1e-10)
    assert phi(dipole_1d, 0.0, 0.0, nodal_params_1d) == 0.0


def test_phi_rejects_one_signed_field(nodal_params):
    u = gaussian_field(make_grid(3, 16, 16.0), 1.5)
    with pytest.raises(DegenerateInputError):
        phi(u, 1.0, 1.0, nodal_params)
    with pytest.raises(DegenerateInputError):
        project_nodal(u, nodal_params)


def test_project_nodal_needs_nodal_mode(dipole_1d, nodal_params_1d):
    with pytest.raises(UnsupportedRegimeError):
        project_nodal(dipole_1d, nodal_params_1d.model_copy(update={'mode': 'groundstate'}))


def test_residuals_add_up(dipole_1d, nodal_params_1d):
    r_plus, r_minus = nodal_residuals(dipole_1d, nodal_params_1d)
    total = first_variation_pair(dipole_1d, dipole_1d, nodal_params_1d)
    assert r_plus + r_minus == pytest.approx(total, rel=1e-12, abs=1e-12)


def test_residuals_agree_with_expansion(grid3, nodal_params):
    u = dipole_initial_field(grid3)
    direct = nodal_residuals(u, nodal_params)
    expanded = phi_coefficients(u, nodal_params).residuals()
    assert direct == pytest.approx(expanded, rel=1e-8)


def test_projection_lands_on_nodal_set(dipole_1d, nodal_params_1d):
    projection = project_nodal(dipole_1d, nodal_params_1d)
    S = energy(projection.projected, nodal_params_1d).norm_sq
    assert max(abs(projection.residual_plus), abs(projection.residual_minus)) <= 1e-8 * S
    assert projection.start_spread <= 1e-8
    assert projection.tau0 > 0 and projection.theta0 > 0


def test_projection_fixed_point(dipole_1d, nodal_params_1d):
    projected = project_nodal(dipole_1d, nodal_params_1d).projected
    again = project_nodal(projected, nodal_params_1d)
    assert again.tau0 == pytest.approx(1.0, abs=1e-8)
    assert again.theta0 == pytest.approx(1.0, abs=1e-8)


def test_maximizer_is_stationary(dipole_1d, nodal_params_1d):
    coeffs = phi_coefficients(dipole_1d, nodal_params_1d)
    best, _ = maximize_phi(coeffs)
    for e_tau, e_theta in ((1e-6 * best.tau, 0.0), (0.0, 1e-6 * best.theta)):
        step = e_tau or e_theta
        derivative = (coeffs.value(best.tau + e_tau, best.theta + e_theta)
                      - coeffs.value(best.tau - e_tau, best.theta - e_theta)) / (2 * step)
        scale = best.tau if e_tau else best.theta
        assert abs(derivative * scale) < 1e-6 * (1 + abs(best.value))


def test_phi_rises_away_from_the_axis(dipole_1d, nodal_params_1d):
    coeffs = phi_coefficients(dipole_1d, nodal_params_1d)
    best, _ = maximize_phi(coeffs)
    values = [coeffs.value(best.tau * f, best.theta) for f in (1e-8, 1e-6, 1e-4)]
    assert values[0] < values[1] < values[2]


def test_phi_is_concave(grid3, nodal_params):
    u = project_nodal(dipole_initial_field(grid3), nodal_params).projected
    report = phi_concavity_check(u, nodal_params, samples=100, seed=0)
    assert report.concave
    assert report.worst < 1e-8
    assert report.at_maximizer < 0
    assert report.diagonal_second_difference < 0


def test_projected_field_dominates_rescalings(dipole_1d, nodal_params_1d):
    u = project_nodal(dipole_1d, nodal_params_1d).projected
    E = energy(u, nodal_params_1d).total
    assert domination_check(u, nodal_params_1d) <= 1e-10 * abs(E)


def test_energy_does_not_split(grid3, nodal_params):
    u = project_nodal(dipole_initial_field(grid3), nodal_params).projected
    E = energy(u, nodal_params).total
    assert abs(energy_nonsplitting(u, nodal_params)) > 1e-3 * abs(E)


def test_dipole_is_antisymmetric(grid1):
    u = dipole_initial_field(grid1)
    assert np.array_equal(u.reflected().values, -u.values)
    assert lp_norm(u, 2.0) == pytest.approx(1.0)
    assert split_parts(u).nontrivial


@pytest.mark.slow
def test_signchanging_solve(grid1, nodal_params_1d):
    report = signchanging_solve(nodal_params_1d, dipole_initial_field(grid1), 1e-6, 3000)
    u = report.field
    split = split_parts(u)
    assert report.converged
    assert report.min_part_norm > 0
    assert lp_norm(split.plus, 2.0) > 0 and lp_norm(split.minus, 2.0) > 0
    S = energy(u, nodal_params_1d).norm_sq
    assert max(abs(r) for r in report.nodal_residuals) <= 1e-6 * S
    assert lp_norm(u + u.reflected(), 2.0) < 1e-6 * lp_norm(u, 2.0)
    history = report.history_frame()
    assert {'norm_plus', 'norm_minus', 'tau0', 'theta0'} <= set(history.columns)

    ground = groundstate_solve(nodal_params_1d.model_copy(update={'mode': 'groundstate'}),
                               default_initial_field(grid1), 1e-7, 2000)
    assert report.final_energy >= ground.final_energy * (1 - 1e-8)


@pytest.mark.slow
def test_nodal_projection_on_the_reference_grid(nodal_params):
    grid = make_grid(3, 32, 16.0)
    projection = project_nodal(dipole_initial_field(grid), nodal_params)
    u = projection.projected
    assert projection.start_spread <= 1e-8
    S = energy(u, nodal_params).norm_sq
    assert max(abs(r) for r in nodal_residuals(u, nodal_params)) <= 1e-8 * S
    assert phi_concavity_check(u, nodal_params, samples=100, seed=0).concave
    E = energy(u, nodal_params).total
    assert domination_check(u, nodal_params, points=5) <= 1e-10 * abs(E)
