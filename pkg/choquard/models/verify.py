"""
Numerical harness for the quantitative estimates: Brezis-Lieb splittings under
large translations, the energy-splitting identity, HLS ratio sweeps and the
finite-difference check of the first variation.
"""
import logging
import math
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator

from .equation import ModelParams, energy, first_variation_pair, hls_check, norm_sq, odd_power
from .errors import ParameterError, UnsupportedConfigurationError
from .nehari import functional_J
from .spectral_core import Field, GridSpec, concentration_function, lp_norm, riesz_convolve

logger = logging.getLogger('verify')


class DecayCurve(BaseModel):
    """Splitting defect against translation distance"""
    model_config = ConfigDict(frozen=True)

    distances: List[float]
    errors: List[float]
    terminal_ratio: float
    # limit of the defect when it does not vanish (energy splitting with lambda != 0)
    offsets: Optional[List[float]] = None
    offset_ratio: Optional[float] = None

    @model_validator(mode='after')
    def _check_shape(self) -> 'DecayCurve':
        if len(self.distances) != len(self.errors) or len(self.distances) < 3:
            raise ValueError("distances and errors need equal length >= 3")
        if any(b <= a for a, b in zip(self.distances, self.distances[1:])):
            raise ValueError("distances must be strictly increasing")
        if any(e < 0 for e in self.errors) or self.terminal_ratio < 0:
            raise ValueError("errors and terminal_ratio must be non-negative")
        return self

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({'distance': self.distances, 'defect': self.errors})
        if self.offsets is not None:
            frame['offset'] = self.offsets
        return frame


class HLSSweep(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_ratio: float
    ratios: List[float]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'sample': np.arange(len(self.ratios)), 'ratio': self.ratios})


class GradientCheck(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_rel_error: float
    epsilon: float
    errors: List[float]


def _check_translations(translations: Sequence[float], grid: GridSpec) -> List[float]:
    values = [float(z) for z in translations]
    if len(values) < 3:
        raise ParameterError(f"need at least 3 translations, got {len(values)}")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ParameterError(f"translations must be strictly increasing: {values}")
    if values[0] < 0:
        raise ParameterError(f"translations must be non-negative: {values}")
    headroom = grid.box_length / 2.0
    if values[-1] >= headroom:
        raise ParameterError(f"translation {values[-1]} exceeds the headroom L/2={headroom}",
                             [f"translations must stay below L/2={headroom}"])
    return values


def _ratio(error: float, scale: float) -> float:
    if error == 0:
        return 0.0
    return error / scale if scale > 0 else math.inf


def random_profile(grid: GridSpec, rng: np.random.Generator, bumps: int = 3) -> Field:
    """Sum of Gaussians with centers in the middle half of the box, widths in [L/16, L/8], amplitudes in [-1, 1]

    The draws do not depend on n, so one seed gives the same profile on every refinement.
    """
    L = grid.box_length
    centers = rng.uniform(-L / 4.0, L / 4.0, size=(bumps, grid.dim))
    widths = rng.uniform(L / 16.0, L / 8.0, size=bumps)
    amplitudes = rng.uniform(-1.0, 1.0, size=bumps)
    coords = grid.coordinates()
    values = np.zeros(grid.shape)
    for center, width, amplitude in zip(centers, widths, amplitudes):
        r2 = sum((c - center[k]) ** 2 for k, c in enumerate(coords))
        values = values + amplitude * np.exp(-r2 / (2.0 * width ** 2))
    return Field(grid, values)


def brezis_lieb_local(w: Field, u: Field, translations: Sequence[float], q_exp: float,
                      r_exp: float) -> DecayCurve:
    """int | |w_n|^q - |w_n - u|^q - |u|^q |^{r/q} with w_n = u + w(. - z e_1)

    Raises:
        ParameterError: If the translations are not increasing or exceed L/2
    """
    distances = _check_translations(translations, u.grid)
    h_d = u.grid.cell_volume
    power = r_exp / q_exp
    errors, scale = [], 0.0
    for z in distances:
        wz = w.shifted(z).values
        w_n = u.values + wz
        defect = np.abs(np.abs(w_n) ** q_exp - np.abs(wz) ** q_exp - np.abs(u.values) ** q_exp)
        errors.append(float(np.sum(defect ** power) * h_d))
        scale = float(np.sum((np.abs(u.values) ** q_exp + np.abs(wz) ** q_exp) ** power) * h_d)
    logger.info(f"Local Brezis-Lieb defects: first {errors[0]:.3e}, last {errors[-1]:.3e}")
    return DecayCurve(distances=distances, errors=errors, terminal_ratio=_ratio(errors[-1], scale))


def _riesz_energy(density: np.ndarray, grid: GridSpec, gamma: float) -> float:
    conv = riesz_convolve(Field(grid, density), gamma).values
    return float(np.sum(conv * density) * grid.cell_volume)


def brezis_lieb_nonlocal(u: Field, w: Field, translations: Sequence[float], gamma: float,
                         r_exp: float) -> DecayCurve:
    """|D(u_n) - D(u_n - u) - D(u)| with u_n = u + w(. - z e_1), D(v) = int (I_gamma * |v|^r)|v|^r"""
    distances = _check_translations(translations, u.grid)
    grid = u.grid
    D_u = _riesz_energy(np.abs(u.values) ** r_exp, grid, gamma)
    errors, scale = [], 0.0
    for z in distances:
        wz = w.shifted(z).values
        D_n = _riesz_energy(np.abs(u.values + wz) ** r_exp, grid, gamma)
        D_w = _riesz_energy(np.abs(wz) ** r_exp, grid, gamma)
        errors.append(abs(D_n - D_w - D_u))
        scale = D_u + D_w
    logger.info(f"Nonlocal Brezis-Lieb defects: first {errors[0]:.3e}, last {errors[-1]:.3e}")
    return DecayCurve(distances=distances, errors=errors, terminal_ratio=_ratio(errors[-1], scale))


def _pairing(v: np.ndarray, h: np.ndarray, grid: GridSpec, gamma: float, r_exp: float) -> float:
    conv = riesz_convolve(Field(grid, np.abs(v) ** r_exp), gamma).values
    return float(np.sum(conv * odd_power(v, r_exp) * h) * grid.cell_volume)


def brezis_lieb_pairing(u: Field, w: Field, h: Field, translations: Sequence[float], gamma: float,
                        r_exp: float) -> DecayCurve:
    """|int (I_gamma*|u_n|^r)|u_n|^{r-2}u_n h - int (I_gamma*|u|^r)|u|^{r-2}u h| with u_n = u + w(. - z e_1)"""
    distances = _check_translations(translations, u.grid)
    grid = u.grid
    base = _pairing(u.values, h.values, grid, gamma, r_exp)
    errors = [abs(_pairing(u.values + w.shifted(z).values, h.values, grid, gamma, r_exp) - base)
              for z in distances]
    return DecayCurve(distances=distances, errors=errors, terminal_ratio=_ratio(errors[-1], abs(base)))


def energy_splitting(u: Field, w: Field, translations: Sequence[float], params: ModelParams) -> DecayCurve:
    """|E_lambda(u + w(. - z)) - E_lambda(u) - J(w(. - z))| per translation

    For lambda != 0 the defect tends to lambda B(w)/(2q) rather than 0; that
    limit is returned in `offsets` and `offset_ratio` measures the last defect
    against it.

    Raises:
        UnsupportedConfigurationError: If the potential is not constant
    """
    if params.potential.family != 'constant':
        raise UnsupportedConfigurationError(
            f"energy splitting needs a constant potential, got {params.potential.to_text()}")
    distances = _check_translations(translations, u.grid)
    E_u = energy(u, params).total
    errors, offsets, scale = [], [], 0.0
    for z in distances:
        wz = w.shifted(z)
        E_n = energy(u + wz, params).total
        J_w = functional_J(wz, params)
        errors.append(abs(E_n - E_u - J_w))
        offsets.append(params.lam * energy(wz, params).beta_integral / (2.0 * params.q))
        scale = abs(E_u) + abs(J_w)
    logger.info(f"Energy splitting defects: first {errors[0]:.3e}, last {errors[-1]:.3e}")
    return DecayCurve(distances=distances, errors=errors, terminal_ratio=_ratio(errors[-1], scale),
                      offsets=offsets, offset_ratio=_ratio(abs(errors[-1] - offsets[-1]), scale))


def hls_sweep(grid: GridSpec, gamma: float, r: float, t: float, count: int, seed: int) -> HLSSweep:
    """HLS ratios |int (I_gamma*f) g| / (||f||_r ||g||_t) over random profile pairs

    Raises:
        ParameterError: If 1/r + 1/t != 1 + gamma/dim
    """
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(count):
        f = random_profile(grid, rng)
        g = random_profile(grid, rng)
        ratios.append(hls_check(f, g, gamma, r, t).ratio)
    return HLSSweep(max_ratio=max(ratios) if ratios else 0.0, ratios=ratios)


def _check_epsilon(eps: float) -> None:
    if not 1e-7 <= eps <= 1e-3:
        raise ParameterError(f"epsilon={eps} outside [1e-7, 1e-3]")


def _fd_errors(params: ModelParams, grid: GridSpec, count: int, seed: int, eps: float) -> List[float]:
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(count):
        u = random_profile(grid, rng)
        v = random_profile(grid, rng)
        pair = first_variation_pair(u, v, params)
        fd = (energy(u + eps * v, params).total - energy(u - eps * v, params).total) / (2.0 * eps)
        diff = abs(fd - pair)
        errors.append(0.0 if diff == 0 else diff / max(abs(pair), np.finfo(float).tiny))
    return errors


def gradient_fd_suite(params: ModelParams, grid: GridSpec, count: int, seed: int,
                      eps: float = 1e-5) -> GradientCheck:
    """Compare <E'(u), v> with the central difference of E on random pairs"""
    _check_epsilon(eps)
    errors = _fd_errors(params, grid, count, seed, eps)
    return GradientCheck(max_rel_error=max(errors) if errors else 0.0, epsilon=eps, errors=errors)


def fd_convergence_order(params: ModelParams, grid: GridSpec, epsilons: Sequence[float] = (1e-3, 3e-4, 1e-4),
                         seed: int = 0, count: int = 3) -> float:
    """Slope of log(max error) against log(epsilon)"""
    for eps in epsilons:
        _check_epsilon(eps)
    worst = [max(_fd_errors(params, grid, count, seed, eps)) for eps in epsilons]
    slope = float(np.polyfit(np.log(epsilons), np.log(worst), 1)[0])
    logger.info(f"Finite-difference order {slope:.3f} from errors {worst}")
    return slope


def concentration_bound(u: Field, params: ModelParams, r: float = 2.0, radius: float = 1.0) -> float:
    """int |u|^r / (||u|| (sup_y int_{B(y)} |u|^r)^{1 - 2/r})"""
    if u.is_zero():
        return 0.0
    local = concentration_function(u, r, radius)
    total = lp_norm(u, r) ** r
    return total / (math.sqrt(norm_sq(u, params)) * local ** (1.0 - 2.0 / r))
