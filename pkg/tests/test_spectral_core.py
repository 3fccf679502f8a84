import math

import numpy as np
import pytest
from scipy.special import erf

from choquard.models.errors import NonConvergenceError, ParameterError, PotentialViolationError
from choquard.models.spectral_core import (
    Field,
    apply_linear_operator,
    concentration_function,
    field_to_frame,
    fractional_laplacian,
    gagliardo_form,
    gaussian_field,
    lp_norm,
    make_grid,
    read_field,
    riesz_convolve,
    riesz_origin_average,
    solve_linear_operator,
    write_field,
    xvs_inner,
)
from choquard.models.equation import PotentialSpec, nonlocal_term, sample_potential
from choquard.models.verify import random_profile


def test_make_grid_spacing():
    grid = make_grid(3, 32, 16.0)
    assert grid.spacing == 0.5
    assert grid.shape == (32, 32, 32)
    assert grid.axis()[0] == -8.0


@pytest.mark.parametrize('dim, n, L', [(4, 32, 16.0), (3, 12, 16.0), (3, 4, 16.0), (2, 32, 0.0)])
def test_make_grid_rejects(dim, n, L):
    with pytest.raises(ParameterError):
        make_grid(dim, n, L)


def test_make_grid_lists_every_violation():
    with pytest.raises(ParameterError) as excinfo:
        make_grid(5, 10, -1.0)
    assert len(excinfo.value.violations) == 3


def test_plane_wave_is_eigenfunction():
    grid = make_grid(2, 32, 10.0)
    k = 2.0 * math.pi * 3 / grid.box_length
    u = Field.from_function(grid, lambda x, y: np.cos(k * x))
    result = fractional_laplacian(u, 0.4)
    assert np.max(np.abs(result.values - k ** 0.8 * u.values)) < 1e-12 * k ** 0.8


def test_fractional_laplacian_semigroup(grid3, random_field):
    twice = fractional_laplacian(fractional_laplacian(random_field, 0.3), 0.4)
    once = fractional_laplacian(random_field, 0.7)
    assert np.max(np.abs(twice.values - once.values)) < 1e-10 * np.max(np.abs(once.values))


def test_fractional_laplacian_rejects_order(random_field):
    with pytest.raises(ParameterError):
        fractional_laplacian(random_field, 1.0)


def test_riesz_gaussian_potential():
    # normalized Gaussian: (|x|^{-1} * rho)(x) = erf(|x| / (sigma sqrt 2)) / |x|
    grid = make_grid(3, 64, 16.0)
    sigma = 1.0
    rho = gaussian_field(grid, sigma, amplitude=(2.0 * math.pi * sigma ** 2) ** -1.5)
    potential = riesz_convolve(rho, 2.0).values
    r = grid.radius()
    with np.errstate(divide='ignore', invalid='ignore'):
        exact = np.where(r > 0, erf(r / (sigma * math.sqrt(2.0))) / r, math.sqrt(2.0 / math.pi) / sigma)
    inside = r <= 4.0 * sigma
    error = np.max(np.abs(potential[inside] - exact[inside])) / exact.max()
    assert error < 1e-3


def test_gaussian_self_energy():
    grid = make_grid(3, 64, 16.0)
    sigma = 1.0
    rho = gaussian_field(grid, sigma, amplitude=(2.0 * math.pi * sigma ** 2) ** -1.5)
    u = Field(grid, np.sqrt(rho.values))
    assert abs(nonlocal_term(u, 2.0, 2.0) * sigma * math.sqrt(math.pi) - 1.0) < 1e-3


def test_origin_weight_matches_lattice_constants():
    # sum' |j|^{-1} over Z^3 continues to -2.8372974794806...
    assert riesz_origin_average(3, 2.0, 0.5) == pytest.approx(2.8372974794806 / 0.5, rel=1e-8)
    # over Z it is 2 zeta(1/2)
    assert riesz_origin_average(1, 0.5, 1.0) == pytest.approx(2.0 * 1.4603545088095868, rel=1e-9)


def test_riesz_convolution_is_self_adjoint(grid3, rng):
    f = random_profile(grid3, rng)
    g = random_profile(grid3, rng)
    fg = np.sum(riesz_convolve(f, 1.5).values * g.values)
    gf = np.sum(f.values * riesz_convolve(g, 1.5).values)
    assert abs(fg - gf) < 1e-12 * max(abs(fg), 1.0)


def test_riesz_rejects_gamma(random_field):
    with pytest.raises(ParameterError):
        riesz_convolve(random_field, 3.0)


def test_gagliardo_of_constant_vanishes(grid3):
    c = Field.constant(grid3, 2.5)
    assert abs(gagliardo_form(c, c, 0.5)) < 1e-10


def test_gagliardo_matches_operator_pairing(grid3, rng):
    u = random_profile(grid3, rng)
    v = random_profile(grid3, rng)
    direct = gagliardo_form(u, v, 0.6)
    weak = float(np.sum(u.values * fractional_laplacian(v, 0.6).values) * grid3.cell_volume)
    assert direct == pytest.approx(weak, rel=1e-10)
    assert gagliardo_form(u, u, 0.6) >= 0


def test_xvs_inner_constant(grid3):
    c = Field.constant(grid3, 3.0)
    V = Field.constant(grid3, 2.0)
    assert xvs_inner(c, c, 0.5, V) == pytest.approx(2.0 * 9.0 * 16.0 ** 3, rel=1e-12)


def test_xvs_inner_requires_positive_potential(grid3, random_field):
    V = Field(grid3, np.zeros(grid3.shape))
    with pytest.raises(PotentialViolationError):
        xvs_inner(random_field, random_field, 0.5, V)


def test_lp_norm():
    grid = make_grid(1, 16, 16.0)
    assert lp_norm(Field.constant(grid, 2.0), 2.0) == pytest.approx(8.0)
    assert lp_norm(Field.constant(grid, 2.0), 1.0) == pytest.approx(32.0)
    with pytest.raises(ParameterError):
        lp_norm(Field.constant(grid, 2.0), 0.5)


def test_linear_solve_constant_potential(grid3, random_field):
    V = Field.constant(grid3, 1.5)
    w = solve_linear_operator(random_field, 0.5, V, tol=1e-12)
    back = apply_linear_operator(w, 0.5, V)
    assert np.linalg.norm(back.flat - random_field.flat) < 1e-10 * np.linalg.norm(random_field.flat)


def test_linear_solve_recovers_field(grid3, random_field):
    V = sample_potential(PotentialSpec.parse('radial:0.1,2,1'), grid3)
    f = apply_linear_operator(random_field, 0.5, V)
    w = solve_linear_operator(f, 0.5, V, tol=1e-12)
    assert np.linalg.norm(w.flat - random_field.flat) < 1e-7 * np.linalg.norm(random_field.flat)


def test_linear_solve_zero_rhs(grid3):
    V = Field.constant(grid3, 1.0)
    assert solve_linear_operator(Field.zeros(grid3), 0.5, V, tol=1e-8).is_zero()


def test_linear_solve_reports_stall(grid3, random_field):
    V = sample_potential(PotentialSpec.parse('radial:1,2,1'), grid3)
    with pytest.raises(NonConvergenceError) as excinfo:
        solve_linear_operator(random_field, 0.5, V, tol=1e-14, max_iter=1)
    assert excinfo.value.last_residual > 0


def test_concentration_of_compact_bump():
    grid = make_grid(1, 64, 16.0)
    u = Field(grid, (np.abs(grid.axis()) <= 0.5).astype(float))
    total = lp_norm(u, 2.0) ** 2
    assert concentration_function(u, 2.0, 1.0) == pytest.approx(total, rel=1e-12)
    assert concentration_function(Field.zeros(grid), 2.0, 1.0) == 0.0


def test_concentration_ignores_a_distant_copy():
    grid = make_grid(1, 64, 16.0)
    x = grid.axis()
    one = Field(grid, (np.abs(x + 4.0) <= 0.5).astype(float))
    two = Field(grid, ((np.abs(x + 4.0) <= 0.5) | (np.abs(x - 4.0) <= 0.5)).astype(float))
    single = concentration_function(one, 2.0, 1.0)
    assert concentration_function(two, 2.0, 1.0) == pytest.approx(single, rel=1e-10)


def test_concentration_rejects_radius(grid1):
    with pytest.raises(ParameterError):
        concentration_function(Field.constant(grid1, 1.0), 2.0, 9.0)


def test_field_shift_and_reflection(grid1):
    u = gaussian_field(grid1, 1.0, [1.0])
    shifted = u.shifted(2.0)
    assert np.argmax(shifted.values) == np.argmax(u.values) + 8
    assert np.array_equal(u.reflected().reflected().values, u.values)
    assert np.argmax(u.reflected().values) == 64 - np.argmax(u.values)


def test_field_values_are_read_only(grid1):
    u = Field.constant(grid1, 1.0)
    with pytest.raises(ValueError):
        u.values[0] = 2.0


def test_field_file_round_trip(tmp_path, grid3, random_field):
    path = str(tmp_path / 'u.chqf')
    write_field(random_field, path)
    loaded = read_field(path)
    assert loaded.grid == grid3
    assert np.array_equal(loaded.values, random_field.values)


def test_read_field_rejects_foreign_file(tmp_path):
    path = tmp_path / 'bad.chqf'
    path.write_bytes(b'NOPE' + bytes(40))
    with pytest.raises(OSError):
        read_field(str(path))
    path.write_bytes(b'CH')
    with pytest.raises(OSError):
        read_field(str(path))


def test_field_frame_columns(grid1):
    frame = field_to_frame(gaussian_field(grid1, 1.0))
    assert list(frame.columns) == ['i0', 'x0', 'value']
    assert len(frame) == 64
