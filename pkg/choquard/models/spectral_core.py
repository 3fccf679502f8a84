"""
Discrete function spaces on a periodic box.

Grids, sampled fields, the FFT fractional Laplacian, free-space Riesz
convolution, the X_V^s inner product and the preconditioned linear solve
used to build Sobolev gradients.

Normalization: (-Delta)^s has Fourier symbol |xi|^{2s} with no C(N,s), and
the Riesz kernel is exactly |x|^{gamma-dim} with no multiplicative constant.
"""
import logging
from functools import lru_cache
from typing import Callable, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.fft as sfft
from pydantic import BaseModel, ConfigDict
from scipy.sparse.linalg import LinearOperator, cg
from scipy.special import gamma as gamma_fn, gammaincc

from .errors import NonConvergenceError, ParameterError, PotentialViolationError

logger = logging.getLogger('spectral_core')

FIELD_MAGIC = b'CHQF'
FIELD_VERSION = 1
_FIELD_HEADER = np.dtype([
    ('magic', 'S4'),
    ('version', '<u4'),
    ('dim', '<u4'),
    ('n', '<u4'),
    ('box_length', '<f8'),
])


class GridSpec(BaseModel):
    """Uniform grid on the box [-L/2, L/2)^dim"""
    model_config = ConfigDict(frozen=True)

    dim: int
    n: int
    box_length: float

    @property
    def spacing(self) -> float:
        return self.box_length / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n ** self.dim

    def axis(self) -> np.ndarray:
        """Node coordinates along one axis: -L/2 + j*h"""
        return -0.5 * self.box_length + self.spacing * np.arange(self.n)

    def coordinates(self) -> Tuple[np.ndarray, ...]:
        """Broadcastable coordinate arrays, one per axis"""
        return _coordinates(self)

    def radius(self) -> np.ndarray:
        """|x| at every node"""
        return _radius(self)

    def to_dict(self) -> dict:
        return {'dim': self.dim, 'n': self.n, 'box_length': self.box_length,
                'spacing': self.spacing}


def make_grid(dim: int, n: int, L: float) -> GridSpec:
    """Build a grid after checking the discretization rules

    Args:
        dim: Spatial dimension, one of 1, 2, 3
        n: Points per axis, a power of two no smaller than 8
        L: Box length

    Returns:
        GridSpec: The grid

    Raises:
        ParameterError: If any rule is violated
    """
    violations = []
    if dim not in (1, 2, 3):
        violations.append(f"dim={dim} must be one of 1, 2, 3")
    if int(n) != n or n < 8 or (int(n) & (int(n) - 1)) != 0:
        violations.append(f"n={n} must be a power of two >= 8")
    if not L > 0:
        violations.append(f"box length L={L} must be positive")
    if violations:
        raise ParameterError('; '.join(violations), violations)
    if dim < 3:
        logger.warning(f"dim={dim} is below the N >= 3 of the equation; exponent windows use N=dim")
    return GridSpec(dim=int(dim), n=int(n), box_length=float(L))


@lru_cache(maxsize=32)
def _coordinates(grid: GridSpec) -> Tuple[np.ndarray, ...]:
    axis = grid.axis()
    coords = []
    for k in range(grid.dim):
        shape = [1] * grid.dim
        shape[k] = grid.n
        coords.append(axis.reshape(shape))
    return tuple(coords)


@lru_cache(maxsize=32)
def _radius(grid: GridSpec) -> np.ndarray:
    r2 = np.zeros(grid.shape)
    for c in _coordinates(grid):
        r2 = r2 + c ** 2
    return np.sqrt(r2)


@lru_cache(maxsize=64)
def _frequency_squared(grid: GridSpec, half: bool) -> np.ndarray:
    """|xi_k|^2 on the frequency lattice, xi_k = 2*pi*k/L

    With half=True the last axis is the non-negative half used by rfftn.
    """
    xi2 = np.zeros(())
    for k in range(grid.dim):
        if half and k == grid.dim - 1:
            xi = 2.0 * np.pi * sfft.rfftfreq(grid.n, d=grid.spacing)
        else:
            xi = 2.0 * np.pi * sfft.fftfreq(grid.n, d=grid.spacing)
        shape = [1] * grid.dim
        shape[k] = xi.size
        xi2 = xi2 + xi.reshape(shape) ** 2
    return xi2


class Field:
    """Real function sampled on a GridSpec

    Values are copied on construction and stored read-only, so a Field can be
    shared between threads.
    """

    __slots__ = ('grid', 'values')

    def __init__(self, grid: GridSpec, values):
        arr = np.array(values, dtype=float)
        if arr.size != grid.size:
            raise ParameterError(f"Field needs {grid.size} values, got {arr.size}")
        arr = arr.reshape(grid.shape)
        if not np.all(np.isfinite(arr)):
            raise ParameterError("Field values must be finite")
        arr.setflags(write=False)
        self.grid = grid
        self.values = arr

    @classmethod
    def zeros(cls, grid: GridSpec) -> 'Field':
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: GridSpec, c: float) -> 'Field':
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_function(cls, grid: GridSpec, fn: Callable[..., np.ndarray]) -> 'Field':
        """Sample fn(x_0, ..., x_{dim-1}) on the grid nodes"""
        return cls(grid, np.broadcast_to(fn(*grid.coordinates()), grid.shape))

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def _coerce(self, other) -> np.ndarray:
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise ParameterError("Fields live on different grids")
            return other.values
        return other

    def __add__(self, other) -> 'Field':
        return Field(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other) -> 'Field':
        return Field(self.grid, self.values - self._coerce(other))

    def __rsub__(self, other) -> 'Field':
        return Field(self.grid, self._coerce(other) - self.values)

    def __neg__(self) -> 'Field':
        return Field(self.grid, -self.values)

    def __mul__(self, other) -> 'Field':
        return Field(self.grid, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, c: float) -> 'Field':
        return Field(self.grid, self.values / c)

    def integral(self) -> float:
        """Quadrature with uniform weight h^dim"""
        return float(self.values.sum() * self.grid.cell_volume)

    def is_zero(self) -> bool:
        return not np.any(self.values)

    def reflected(self) -> 'Field':
        """u(-x) under the periodic identification of the box"""
        axes = tuple(range(self.grid.dim))
        return Field(self.grid, np.roll(np.flip(self.values, axis=axes), 1, axis=axes))

    def shifted(self, z: float) -> 'Field':
        """u(x - z e_1) with zero fill; z is rounded to whole cells"""
        cells = int(round(z / self.grid.spacing))
        out = np.zeros(self.grid.shape)
        n = self.grid.n
        if abs(cells) < n:
            if cells >= 0:
                out[cells:] = self.values[:n - cells]
            else:
                out[:n + cells] = self.values[-cells:]
        return Field(self.grid, out)

    def __repr__(self) -> str:
        return f"Field(dim={self.grid.dim}, n={self.grid.n}, L={self.grid.box_length})"


def gaussian_field(grid: GridSpec, width: float, center: Optional[Sequence[float]] = None,
                   amplitude: float = 1.0) -> Field:
    """amplitude * exp(-|x - center|^2 / (2 width^2))"""
    center = np.zeros(grid.dim) if center is None else np.asarray(center, dtype=float)
    r2 = sum((c - center[k]) ** 2 for k, c in enumerate(grid.coordinates()))
    return Field(grid, np.broadcast_to(amplitude * np.exp(-r2 / (2.0 * width ** 2)), grid.shape))


class SpectralMultiplier(BaseModel):
    """Fourier multiplier on the rfftn lattice of a grid

    For kind='riesz' the grid is the zero-padded (2n)^dim grid and the symbol is
    the transform of the sampled kernel times h^dim.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kind: Literal['frac_laplacian', 'riesz']
    order: float
    grid: GridSpec
    symbol: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return sfft.irfftn(sfft.rfftn(values) * self.symbol, s=self.grid.shape)


@lru_cache(maxsize=32)
def fractional_laplacian_multiplier(grid: GridSpec, s: float) -> SpectralMultiplier:
    """|xi_k|^{2s}, exactly 0 at k = 0"""
    return SpectralMultiplier(kind='frac_laplacian', order=s, grid=grid,
                              symbol=_frequency_squared(grid, True) ** s)


def _lattice_zeta(dim: int, s: float, shells: int = 4) -> float:
    """Continued lattice sum sum'_{j in Z^dim} |j|^{-s} for 0 < s < dim, by Ewald splitting"""
    axis = np.arange(-shells, shells + 1)
    mesh = np.meshgrid(*([axis] * dim), indexing='ij')
    r2 = sum(m.astype(float) ** 2 for m in mesh).ravel()
    x = np.pi * r2[r2 > 0]
    a, b = s / 2.0, (dim - s) / 2.0
    direct = np.sum(gamma_fn(a) * gammaincc(a, x) * x ** (-a))
    dual = np.sum(gamma_fn(b) * gammaincc(b, x) * x ** (-b))
    return float(np.pi ** a / gamma_fn(a) * (direct + dual + 2.0 / (s - dim) - 2.0 / s))


def riesz_origin_average(dim: int, gamma: float, h: float) -> float:
    """Value given to |x|^{gamma-dim} on the origin cell

    Taken as -Z(dim - gamma) h^{gamma-dim} with Z the continued lattice sum, so
    the sampled kernel integrates the singular part of smooth densities to
    O(h^{gamma+2}) instead of O(h^gamma).
    """
    return -_lattice_zeta(dim, dim - gamma) * h ** (gamma - dim)


@lru_cache(maxsize=32)
def riesz_multiplier(grid: GridSpec, gamma: float) -> SpectralMultiplier:
    """Transform of the sampled kernel |x|^{gamma-dim} on the padded grid"""
    padded = GridSpec(dim=grid.dim, n=2 * grid.n, box_length=2.0 * grid.box_length)
    h = grid.spacing
    r2 = np.zeros(())
    for k in range(grid.dim):
        offsets = sfft.fftfreq(padded.n, d=1.0 / padded.n)
        shape = [1] * grid.dim
        shape[k] = padded.n
        r2 = r2 + (h * offsets.reshape(shape)) ** 2
    r = np.sqrt(np.broadcast_to(r2, padded.shape))
    kernel = np.empty(padded.shape)
    nonzero = r > 0
    kernel[nonzero] = r[nonzero] ** (gamma - grid.dim)
    kernel[(0,) * grid.dim] = riesz_origin_average(grid.dim, gamma, h)
    symbol = sfft.rfftn(kernel) * grid.cell_volume
    return SpectralMultiplier(kind='riesz', order=gamma, grid=padded, symbol=symbol)


def _check_order(s: float) -> None:
    if not 0.0 < s < 1.0:
        raise ParameterError(f"s={s} violates 0 < s < 1", [f"s={s} must lie in (0, 1)"])


def fractional_laplacian(u: Field, s: float) -> Field:
    """(-Delta)^s u via its Fourier symbol |xi|^{2s}

    Args:
        u: Input field
        s: Order in (0, 1)

    Returns:
        Field: The image of u
    """
    _check_order(s)
    return Field(u.grid, fractional_laplacian_multiplier(u.grid, s).apply(u.values))


def riesz_convolve(u: Field, gamma: float) -> Field:
    """(I_gamma * u) by zero-padded linear FFT convolution

    Args:
        u: Input field
        gamma: Order in (0, dim)

    Returns:
        Field: The convolution sampled on u's grid
    """
    grid = u.grid
    if not 0.0 < gamma < grid.dim:
        raise ParameterError(f"gamma={gamma} violates 0 < gamma < dim={grid.dim}",
                             [f"gamma={gamma} must lie in (0, {grid.dim})"])
    multiplier = riesz_multiplier(grid, float(gamma))
    block = (slice(0, grid.n),) * grid.dim
    padded = np.zeros(multiplier.grid.shape)
    padded[block] = u.values
    return Field(grid, multiplier.apply(padded)[block])


def _same_grid(u: Field, v: Field) -> None:
    if u.grid != v.grid:
        raise ParameterError("Fields live on different grids")


def gagliardo_form(u: Field, v: Field, s: float) -> float:
    """Discrete [u, v]_{s,2}: sum_k |xi_k|^{2s} u_k conj(v_k) with spectral weight h^d / n^d"""
    _same_grid(u, v)
    _check_order(s)
    grid = u.grid
    u_hat = sfft.fftn(u.values)
    v_hat = sfft.fftn(v.values)
    symbol = _frequency_squared(grid, False) ** s
    weight = grid.cell_volume / grid.size
    return float(np.real(np.sum(symbol * u_hat * np.conj(v_hat))) * weight)


def fractional_kernel(grid: GridSpec, s: float) -> np.ndarray:
    """Periodic kernel K with [u, v]_{s,2} = h^d sum_ij K(i - j) u_i v_j"""
    _check_order(s)
    return np.real(sfft.ifftn(_frequency_squared(grid, False) ** s))


def check_potential(V: Field) -> float:
    """Returns min V over the grid, which must be positive"""
    v_min = float(V.values.min())
    if not v_min > 0:
        raise PotentialViolationError(f"potential must satisfy V >= V0 > 0, but min V = {v_min}",
                                      [f"inf V >= V0 > 0 fails, min V = {v_min}"])
    return v_min


def xvs_inner(u: Field, v: Field, s: float, V: Field) -> float:
    """<u, v>_{X_V^s} = [u, v]_{s,2} + int V u v"""
    check_potential(V)
    _same_grid(u, V)
    return gagliardo_form(u, v, s) + float(np.sum(V.values * u.values * v.values)) * u.grid.cell_volume


def lp_norm(u: Field, r: float) -> float:
    """(int |u|^r)^{1/r}"""
    if not r >= 1.0:
        raise ParameterError(f"r={r} violates r >= 1")
    return float((np.sum(np.abs(u.values) ** r) * u.grid.cell_volume) ** (1.0 / r))


def apply_linear_operator(w: Field, s: float, V: Field) -> Field:
    """((-Delta)^s + V) w"""
    _same_grid(w, V)
    return Field(w.grid, fractional_laplacian_multiplier(w.grid, s).apply(w.values) + V.values * w.values)


def solve_linear_operator(f: Field, s: float, V: Field, tol: float, max_iter: int = 1000) -> Field:
    """Solve ((-Delta)^s + V) w = f by preconditioned conjugate gradients

    The preconditioner is the constant-coefficient operator (-Delta)^s + mean(V),
    inverted exactly in Fourier space.

    Args:
        f: Right-hand side
        s: Order in (0, 1)
        V: Potential with min V > 0
        tol: Relative residual target
        max_iter: CG iteration cap

    Returns:
        Field: The solution w

    Raises:
        NonConvergenceError: If CG hits max_iter; carries the last relative residual
    """
    if not tol > 0:
        raise ParameterError(f"tol={tol} must be positive")
    _check_order(s)
    check_potential(V)
    _same_grid(f, V)
    grid = f.grid
    b = f.flat
    b_norm = np.linalg.norm(b)
    if b_norm == 0:
        return Field.zeros(grid)

    lap = fractional_laplacian_multiplier(grid, s)
    v_values = V.values
    shape = grid.shape
    shifted_symbol = lap.symbol + float(v_values.mean())

    def matvec(x):
        x = x.reshape(shape)
        return (lap.apply(x) + v_values * x).ravel()

    def precondition(r):
        return sfft.irfftn(sfft.rfftn(r.reshape(shape)) / shifted_symbol, s=shape).ravel()

    A = LinearOperator((grid.size, grid.size), matvec=matvec, dtype=float)
    M = LinearOperator((grid.size, grid.size), matvec=precondition, dtype=float)
    x, info = cg(A, b, x0=precondition(b), rtol=tol, atol=0.0, maxiter=max_iter, M=M)
    residual = float(np.linalg.norm(b - matvec(x)) / b_norm)
    if info != 0:
        logger.error(f"Linear solve stalled after {max_iter} iterations, residual {residual:.3e}")
        raise NonConvergenceError(f"linear solve did not reach tol={tol} in {max_iter} iterations",
                                  last_residual=residual)
    logger.debug(f"Linear solve converged, residual {residual:.3e}")
    return Field(grid, x)


@lru_cache(maxsize=32)
def _ball_transform(grid: GridSpec, radius: float) -> np.ndarray:
    r2 = np.zeros(())
    for k in range(grid.dim):
        offsets = grid.spacing * sfft.fftfreq(grid.n, d=1.0 / grid.n)
        shape = [1] * grid.dim
        shape[k] = grid.n
        r2 = r2 + offsets.reshape(shape) ** 2
    ball = (np.broadcast_to(r2, grid.shape) <= radius ** 2 * (1.0 + 1e-12)).astype(float)
    return sfft.rfftn(ball)


def concentration_function(u: Field, r: float, radius: float) -> float:
    """max_y of int_{B_radius(y)} |u|^r over grid points y, with periodic wrap"""
    grid = u.grid
    if not 0 < radius <= grid.box_length / 2.0:
        raise ParameterError(f"radius={radius} must lie in (0, L/2={grid.box_length / 2.0}]")
    density = np.abs(u.values) ** r
    if not np.any(density):
        return 0.0
    local = sfft.irfftn(sfft.rfftn(density) * _ball_transform(grid, float(radius)), s=grid.shape)
    return float(local.max() * grid.cell_volume)


def write_field(u: Field, path: str) -> None:
    """Write u in the CHQF binary format"""
    grid = u.grid
    header = np.array([(FIELD_MAGIC, FIELD_VERSION, grid.dim, grid.n, grid.box_length)], dtype=_FIELD_HEADER)
    with open(path, 'wb') as handle:
        handle.write(header.tobytes())
        handle.write(np.ascontiguousarray(u.values, dtype='<f8').tobytes())


def read_field(path: str) -> Field:
    """Read a field written by write_field

    Raises:
        OSError: If the file is not a CHQF version 1 file or is truncated
    """
    with open(path, 'rb') as handle:
        data = handle.read()
    if len(data) < _FIELD_HEADER.itemsize:
        raise OSError(f"{path}: truncated CHQF header")
    header = np.frombuffer(data[:_FIELD_HEADER.itemsize], dtype=_FIELD_HEADER)[0]
    if header['magic'] != FIELD_MAGIC or int(header['version']) != FIELD_VERSION:
        raise OSError(f"{path}: not a CHQF version {FIELD_VERSION} file")
    grid = make_grid(int(header['dim']), int(header['n']), float(header['box_length']))
    values = np.frombuffer(data[_FIELD_HEADER.itemsize:], dtype='<f8')
    if values.size != grid.size:
        raise OSError(f"{path}: expected {grid.size} values, found {values.size}")
    return Field(grid, values)


def field_to_frame(u: Field) -> pd.DataFrame:
    """One row per node: index coordinates, physical coordinates, value"""
    grid = u.grid
    index = np.indices(grid.shape).reshape(grid.dim, -1)
    axis = grid.axis()
    columns = {}
    for k in range(grid.dim):
        columns[f"i{k}"] = index[k]
    for k in range(grid.dim):
        columns[f"x{k}"] = axis[index[k]]
    columns['value'] = u.flat
    return pd.DataFrame(columns)


def write_field_csv(u: Field, path: str) -> None:
    field_to_frame(u).to_csv(path, index=False)
