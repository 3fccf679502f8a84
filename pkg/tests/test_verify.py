import math

import numpy as np
import pytest
from pydantic import ValidationError

from choquard.models.equation import PotentialSpec
from choquard.models.errors import ParameterError, UnsupportedConfigurationError
from choquard.models.spectral_core import Field, gaussian_field, make_grid
from choquard.models.verify import (
    DecayCurve,
    brezis_lieb_local,
    brezis_lieb_nonlocal,
    brezis_lieb_pairing,
    concentration_bound,
    energy_splitting,
    fd_convergence_order,
    gradient_fd_suite,
    hls_sweep,
    random_profile,
)

# whole cells of the 0.75 spacing, below L/2 = 12
TRANSLATIONS = [6.0, 7.5, 9.0, 10.5]


@pytest.fixture
def grid():
    return make_grid(3, 32, 24.0)


@pytest.fixture
def profiles(grid):
    u = gaussian_field(grid, 1.0)
    w = gaussian_field(grid, 1.0, amplitude=0.4)
    return u, w


def _strictly_decreasing(values):
    return all(b < a for a, b in zip(values, values[1:]))


def test_local_splitting_vanishes_for_separated_supports(profiles):
    u, w = profiles
    curve = brezis_lieb_local(w, u, TRANSLATIONS, 2.2, 2.2)
    assert curve.distances == TRANSLATIONS
    assert _strictly_decreasing(curve.errors)
    assert curve.terminal_ratio < 1e-3


def _compact_bump(grid, amplitude=1.0):
    r2 = grid.radius() ** 2
    return Field(grid, amplitude * np.where(r2 < 4.0, (1.0 - r2 / 4.0) ** 2, 0.0))


def test_local_splitting_is_exact_for_disjoint_supports(grid):
    u = _compact_bump(grid)
    w = _compact_bump(grid, amplitude=0.4)
    curve = brezis_lieb_local(w, u, [4.5, 6.0, 7.5], 2.2, 2.2)
    assert curve.errors == [0.0, 0.0, 0.0]
    assert curve.terminal_ratio == 0.0


def test_local_splitting_without_bump(grid, profiles):
    u, _ = profiles
    curve = brezis_lieb_local(Field.zeros(grid), u, TRANSLATIONS, 2.2, 2.2)
    assert curve.errors == [0.0] * len(TRANSLATIONS)
    assert curve.terminal_ratio == 0.0


def test_nonlocal_splitting_decays_like_the_kernel(profiles):
    # outside the supports the cross term is 2 M_u M_w / z for the kernel 1/|x|
    u, w = profiles
    curve = brezis_lieb_nonlocal(u, w, TRANSLATIONS, 2.0, 2.0)
    assert _strictly_decreasing(curve.errors)
    scaled = np.array(curve.errors) * np.array(curve.distances)
    assert np.ptp(scaled) < 0.05 * scaled.mean()
    assert 0 < curve.terminal_ratio < 5e-2


def test_nonlocal_splitting_is_symmetric_in_the_bumps(grid):
    # radial bumps: swapping them is a reflection about z/2, which stays on the grid
    u = _compact_bump(grid)
    w = _compact_bump(grid, amplitude=0.4)
    forward = brezis_lieb_nonlocal(u, w, [4.5, 6.0, 7.5, 9.0], 2.0, 2.0)
    swapped = brezis_lieb_nonlocal(w, u, [4.5, 6.0, 7.5, 9.0], 2.0, 2.0)
    assert all(e > 0 for e in forward.errors)
    assert swapped.errors == pytest.approx(forward.errors, rel=1e-8)


def test_pairing_splitting_decays_like_the_kernel(profiles):
    u, w = profiles
    curve = brezis_lieb_pairing(u, w, u, TRANSLATIONS, 2.0, 2.0)
    assert _strictly_decreasing(curve.errors)
    scaled = np.array(curve.errors) * np.array(curve.distances)
    assert np.ptp(scaled) < 0.05 * scaled.mean()
    assert curve.terminal_ratio < 5e-2


def test_translations_are_checked(profiles):
    u, w = profiles
    with pytest.raises(ParameterError):
        brezis_lieb_nonlocal(u, w, [4.0, 5.0], 2.0, 2.0)
    with pytest.raises(ParameterError):
        brezis_lieb_nonlocal(u, w, [4.0, 6.0, 5.0], 2.0, 2.0)
    with pytest.raises(ParameterError):
        brezis_lieb_nonlocal(u, w, [4.5, 6.0, 12.0], 2.0, 2.0)


def test_decay_curve_shape_is_validated():
    with pytest.raises(ValidationError):
        DecayCurve(distances=[1.0, 2.0, 3.0], errors=[1.0, 0.5], terminal_ratio=0.1)
    with pytest.raises(ValidationError):
        DecayCurve(distances=[1.0, 2.0, 3.0], errors=[1.0, -0.5, 0.1], terminal_ratio=0.1)


def test_energy_splitting_without_coupling(ground_params, grid):
    params = ground_params.with_lambda(0.0)
    u = gaussian_field(grid, 0.8)
    w = gaussian_field(grid, 1.0, amplitude=0.3)
    curve = energy_splitting(u, w, TRANSLATIONS, params)
    assert curve.offsets == [0.0] * len(TRANSLATIONS)
    assert _strictly_decreasing(curve.errors)
    assert curve.terminal_ratio < 5e-2


def test_energy_splitting_with_coupling_tends_to_offset(ground_params, grid):
    u = gaussian_field(grid, 0.8)
    w = gaussian_field(grid, 1.0, amplitude=0.3)
    curve = energy_splitting(u, w, TRANSLATIONS, ground_params)
    assert all(offset > 0 for offset in curve.offsets)
    assert curve.offsets == pytest.approx([curve.offsets[0]] * len(TRANSLATIONS), rel=2e-2)
    gaps = [abs(e - o) for e, o in zip(curve.errors, curve.offsets)]
    assert _strictly_decreasing(gaps)
    assert 0 <= curve.offset_ratio < curve.terminal_ratio
    assert 'offset' in curve.to_frame().columns


def test_energy_splitting_needs_constant_potential(ground_params, profiles):
    u, w = profiles
    params = ground_params.model_copy(update={'potential': PotentialSpec.parse('radial:1,2,1')})
    with pytest.raises(UnsupportedConfigurationError):
        energy_splitting(u, w, TRANSLATIONS, params)


def test_random_profile_is_resolution_independent():
    coarse = random_profile(make_grid(1, 32, 16.0), np.random.default_rng(3))
    fine = random_profile(make_grid(1, 64, 16.0), np.random.default_rng(3))
    assert np.allclose(fine.values[::2], coarse.values, rtol=0, atol=1e-14)


def test_hls_sweep_stable_under_refinement():
    r = 2.0 * 3 / (3 + 2.0)
    coarse = hls_sweep(make_grid(3, 32, 16.0), 2.0, r, r, count=20, seed=5)
    fine = hls_sweep(make_grid(3, 64, 16.0), 2.0, r, r, count=20, seed=5)
    assert len(coarse.ratios) == 20
    assert all(math.isfinite(x) and x > 0 for x in coarse.ratios)
    assert abs(fine.max_ratio - coarse.max_ratio) < 0.05 * coarse.max_ratio
    assert list(coarse.to_frame().columns) == ['sample', 'ratio']


def test_hls_sweep_rejects_exponents(grid):
    with pytest.raises(ParameterError):
        hls_sweep(grid, 2.0, 2.0, 2.0, count=2, seed=0)


def test_gradient_matches_central_difference(nodal_params):
    grid = make_grid(3, 16, 16.0)
    check = gradient_fd_suite(nodal_params, grid, count=20, seed=0, eps=1e-5)
    assert len(check.errors) == 20
    assert check.max_rel_error < 1e-6


def test_gradient_check_rejects_epsilon(nodal_params, grid3):
    with pytest.raises(ParameterError):
        gradient_fd_suite(nodal_params, grid3, count=1, seed=0, eps=1e-2)


def test_central_difference_is_second_order(nodal_params):
    grid = make_grid(3, 16, 16.0)
    slope = fd_convergence_order(nodal_params, grid, seed=0, count=3)
    assert 1.6 <= slope <= 2.4


def test_concentration_bound(ground_params, grid, profiles):
    u, _ = profiles
    assert concentration_bound(u, ground_params) > 0
    assert concentration_bound(Field.zeros(grid), ground_params) == 0.0
