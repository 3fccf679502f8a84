"""
The doubly-nonlocal fractional Choquard equation

    (-Delta)^s u + V u = (I_alpha * |u|^p)|u|^{p-2}u + lambda (I_beta * |u|^q)|u|^{q-2}u

its parameters, potentials, energy functional and first variation.
"""
import logging
import math
from functools import lru_cache
from typing import Dict, List, Literal, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from pydantic import Field as PydanticField

from .errors import ParameterError, PotentialViolationError
from .spectral_core import (
    Field,
    GridSpec,
    apply_linear_operator,
    gagliardo_form,
    lp_norm,
    riesz_convolve,
    solve_linear_operator,
    xvs_inner,
)

logger = logging.getLogger('equation')

_FAMILY_ALIASES = {
    'const': 'constant', 'constant': 'constant',
    'radial': 'radial_power', 'radial_power': 'radial_power',
    'osc': 'oscillating', 'oscillating': 'oscillating',
}
_FAMILY_ARITY = {'constant': 1, 'radial_power': 3, 'oscillating': 1}


class PotentialSpec(BaseModel):
    """One of the supported potential families

    constant(V0):        V = V0
    radial_power(a,b,c): V = a|x|^b + c
    oscillating(c):      V = |x|^4 sin^2|x| + c
    """
    model_config = ConfigDict(frozen=True)

    family: Literal['constant', 'radial_power', 'oscillating']
    params: Tuple[float, ...]
    declared_V0: Optional[float] = None

    @model_validator(mode='after')
    def _check_arity(self) -> 'PotentialSpec':
        expected = _FAMILY_ARITY[self.family]
        if len(self.params) != expected:
            raise ValueError(f"{self.family} takes {expected} parameter(s), got {len(self.params)}")
        return self

    @classmethod
    def parse(cls, text: str) -> 'PotentialSpec':
        """Parse 'family:p1,p2,...', e.g. 'const:1', 'radial:1,2,1', 'osc:1'"""
        name, _, rest = text.partition(':')
        family = _FAMILY_ALIASES.get(name.strip().lower())
        if family is None:
            raise ParameterError(f"unknown potential family '{name}'")
        try:
            params = tuple(float(x) for x in rest.split(',') if x.strip())
            return cls(family=family, params=params)
        except ValueError as e:
            raise ParameterError(f"bad potential spec '{text}': {e}")

    def to_text(self) -> str:
        return f"{self.family}:{','.join(repr(x) for x in self.params)}"

    @property
    def V0(self) -> float:
        """Declared lower bound of V"""
        if self.declared_V0 is not None:
            return self.declared_V0
        return self.params[-1] if self.family != 'constant' else self.params[0]

    @property
    def compact_sublevels(self) -> bool:
        """Family documented as having sublevel sets of finite measure; not checked on the grid"""
        if self.family == 'radial_power':
            a, _, c = self.params
            return a > 0 and c > 0
        return True

    def evaluate(self, r: np.ndarray) -> np.ndarray:
        if self.family == 'constant':
            return np.full_like(r, self.params[0], dtype=float)
        if self.family == 'radial_power':
            a, b, c = self.params
            return a * r ** b + c
        (c,) = self.params
        return r ** 4 * np.sin(r) ** 2 + c


class ModelParams(BaseModel):
    """Every parameter of the equation; dim plays the role of N"""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    dim: int = 3
    s: float
    alpha: float
    beta: float
    p: float
    q: float
    lam: float = PydanticField(alias='lambda')
    potential: PotentialSpec = PotentialSpec(family='constant', params=(1.0,))
    mode: Literal['groundstate', 'nodal'] = 'groundstate'

    def with_lambda(self, lam: float) -> 'ModelParams':
        return self.model_copy(update={'lam': lam})

    def to_dict(self) -> Dict[str, object]:
        return {
            'dim': self.dim, 's': self.s, 'alpha': self.alpha, 'beta': self.beta,
            'p': self.p, 'q': self.q, 'lambda': self.lam,
            'potential': self.potential.to_text(), 'mode': self.mode,
        }


class EnergyBreakdown(BaseModel):
    """Terms of E_lambda(u); total = seminorm_half + potential_half - alpha_term - beta_term"""
    model_config = ConfigDict(frozen=True)

    seminorm_half: float
    potential_half: float
    kinetic: float
    alpha_term: float
    beta_term: float
    total: float
    norm_sq: float
    alpha_integral: float
    beta_integral: float


class HLSCheck(BaseModel):
    model_config = ConfigDict(frozen=True)

    lhs: float
    norm_f: float
    norm_g: float

    @property
    def ratio(self) -> float:
        denom = self.norm_f * self.norm_g
        return self.lhs / denom if denom > 0 else 0.0


def exponent_window(dim: int, gamma: float, s: float) -> Tuple[float, float]:
    """Open interval ((dim+gamma)/dim, (dim+gamma)/(dim-2s)); upper end is inf when dim <= 2s"""
    lower = (dim + gamma) / dim
    upper = (dim + gamma) / (dim - 2.0 * s) if dim > 2.0 * s else math.inf
    return lower, upper


def validate_params(params: ModelParams) -> ModelParams:
    """Check every hypothesis for the declared mode

    Returns:
        ModelParams: params unchanged when all checks pass

    Raises:
        ParameterError: Listing each violated inequality with its admissible interval
    """
    N, s = params.dim, params.s
    violations: List[str] = []

    if not 0.0 < s < 1.0:
        violations.append(f"s={s} violates 0 < s < 1")
    for name in ('alpha', 'beta'):
        value = getattr(params, name)
        if not 0.0 < value < N:
            violations.append(f"{name}={value} violates 0 < {name} < N: admissible interval (0, {N})")

    if not violations:
        for exp_name, gamma_name in (('p', 'alpha'), ('q', 'beta')):
            value = getattr(params, exp_name)
            lower, upper = exponent_window(N, getattr(params, gamma_name), s)
            if not lower < value < upper:
                violations.append(
                    f"{exp_name}={value:g} violates (N+{gamma_name})/N < {exp_name} < (N+{gamma_name})/(N-2s): "
                    f"admissible interval ({lower:.6g}, {upper:.6g})")

    if params.mode == 'groundstate':
        if not params.p > params.q > 1.0:
            violations.append(f"p={params.p:g}, q={params.q:g} violate p > q > 1 (groundstate)")
        if not params.lam > 0.0:
            violations.append(f"lambda={params.lam:g} violates lambda > 0 (groundstate)")
    else:
        if not params.p > params.q > 2.0:
            violations.append(f"p={params.p:g}, q={params.q:g} violate p > q > 2 (nodal)")
        floor = max(N - 4.0 * s, 0.0)
        for name in ('alpha', 'beta'):
            value = getattr(params, name)
            if not floor < value < N:
                violations.append(f"{name}={value:g} violates (N-4s)_+ < {name} < N (nodal): "
                                  f"admissible interval ({floor:.6g}, {N})")
        if params.lam < 0 and not violations:
            logger.warning("lambda < 0 in nodal mode: concavity of the fibering map rests on p, q > 2 only")

    if violations:
        raise ParameterError('; '.join(violations), violations)
    if N < 3:
        logger.warning(f"dim={N} is below N >= 3; windows evaluated with N=dim")
    return params


def sample_potential(spec: PotentialSpec, grid: GridSpec) -> Field:
    """Sample V on the grid and check V >= V0 > 0

    Raises:
        PotentialViolationError: If declared V0 <= 0 or min V < declared V0
    """
    values = spec.evaluate(grid.radius())
    v0 = spec.V0
    v_min = float(values.min())
    if not v0 > 0:
        raise PotentialViolationError(f"V >= V0 > 0 requires V0 > 0, {spec.to_text()} declares V0={v0}",
                                      [f"V0={v0} must be positive"])
    if v_min < v0 * (1.0 - 1e-12):
        raise PotentialViolationError(f"V >= V0 fails on grid: min V = {v_min} < V0 = {v0}",
                                      [f"min V={v_min} below V0={v0}"])
    return Field(grid, values)


@lru_cache(maxsize=32)
def potential_field(spec: PotentialSpec, grid: GridSpec) -> Field:
    return sample_potential(spec, grid)


def _potential(params: ModelParams, grid: GridSpec) -> Field:
    if params.dim != grid.dim:
        raise ParameterError(f"params.dim={params.dim} does not match grid dim={grid.dim}")
    return potential_field(params.potential, grid)


def odd_power(values: np.ndarray, r: float) -> np.ndarray:
    """|u|^{r-2} u written as sign(u)|u|^{r-1}, zero where u = 0"""
    return np.sign(values) * np.abs(values) ** (r - 1.0)


def nonlocal_term(u: Field, gamma: float, r: float) -> float:
    """int (I_gamma * |u|^r) |u|^r"""
    if not r > 1.0:
        raise ParameterError(f"r={r} violates r > 1")
    density = Field(u.grid, np.abs(u.values) ** r)
    conv = riesz_convolve(density, gamma)
    return float(np.sum(conv.values * density.values) * u.grid.cell_volume)


class NonlinearParts(NamedTuple):
    """Riesz convolutions of |u|^p and |u|^q and the integrals A, B"""
    conv_alpha: np.ndarray
    conv_beta: Optional[np.ndarray]
    A: float
    B: float


def nonlinear_parts(u: Field, params: ModelParams, with_beta: bool = True) -> NonlinearParts:
    h_d = u.grid.cell_volume
    dens_a = np.abs(u.values) ** params.p
    conv_a = riesz_convolve(Field(u.grid, dens_a), params.alpha).values
    A = float(np.sum(conv_a * dens_a) * h_d)
    if not with_beta:
        return NonlinearParts(conv_a, None, A, 0.0)
    dens_b = np.abs(u.values) ** params.q
    conv_b = riesz_convolve(Field(u.grid, dens_b), params.beta).values
    B = float(np.sum(conv_b * dens_b) * h_d)
    return NonlinearParts(conv_a, conv_b, A, B)


def energy(u: Field, params: ModelParams) -> EnergyBreakdown:
    """E_lambda(u) = 1/2 ||u||^2 - A(u)/(2p) - lambda B(u)/(2q)"""
    V = _potential(params, u.grid)
    seminorm = gagliardo_form(u, u, params.s)
    potential = float(np.sum(V.values * u.values ** 2) * u.grid.cell_volume)
    parts = nonlinear_parts(u, params, with_beta=params.lam != 0.0)
    seminorm_half = 0.5 * seminorm
    potential_half = 0.5 * potential
    alpha_term = parts.A / (2.0 * params.p)
    beta_term = params.lam * parts.B / (2.0 * params.q)
    return EnergyBreakdown(
        seminorm_half=seminorm_half,
        potential_half=potential_half,
        kinetic=seminorm_half + potential_half,
        alpha_term=alpha_term,
        beta_term=beta_term,
        total=seminorm_half + potential_half - alpha_term - beta_term,
        norm_sq=seminorm + potential,
        alpha_integral=parts.A,
        beta_integral=parts.B,
    )


def scale_breakdown(breakdown: EnergyBreakdown, t: float, params: ModelParams) -> EnergyBreakdown:
    """Energy terms of t*u from those of u, using the homogeneity of each term"""
    t2, t2p, t2q = t * t, t ** (2.0 * params.p), t ** (2.0 * params.q)
    seminorm_half = breakdown.seminorm_half * t2
    potential_half = breakdown.potential_half * t2
    alpha_term = breakdown.alpha_term * t2p
    beta_term = breakdown.beta_term * t2q
    return EnergyBreakdown(
        seminorm_half=seminorm_half,
        potential_half=potential_half,
        kinetic=seminorm_half + potential_half,
        alpha_term=alpha_term,
        beta_term=beta_term,
        total=seminorm_half + potential_half - alpha_term - beta_term,
        norm_sq=breakdown.norm_sq * t2,
        alpha_integral=breakdown.alpha_integral * t2p,
        beta_integral=breakdown.beta_integral * t2q,
    )


def norm_sq(u: Field, params: ModelParams) -> float:
    """||u||^2 in X_V^s"""
    return xvs_inner(u, u, params.s, _potential(params, u.grid))


def nonlinear_force(u: Field, params: ModelParams) -> Field:
    """(I_alpha * |u|^p)|u|^{p-2}u + lambda (I_beta * |u|^q)|u|^{q-2}u"""
    parts = nonlinear_parts(u, params, with_beta=params.lam != 0.0)
    force = parts.conv_alpha * odd_power(u.values, params.p)
    if parts.conv_beta is not None:
        force = force + params.lam * parts.conv_beta * odd_power(u.values, params.q)
    return Field(u.grid, force)


def first_variation_pair(u: Field, v: Field, params: ModelParams,
                         force: Optional[Field] = None) -> float:
    """<E_lambda'(u), v>

    Args:
        u: Point of evaluation
        v: Direction
        params: Equation parameters
        force: nonlinear_force(u, params) when the caller already has it
    """
    V = _potential(params, u.grid)
    if force is None:
        force = nonlinear_force(u, params)
    return xvs_inner(u, v, params.s, V) - float(np.sum(force.values * v.values) * u.grid.cell_volume)


def residual_field(u: Field, params: ModelParams) -> Field:
    """Strong-form residual (-Delta)^s u + V u - nonlinear_force(u)"""
    V = _potential(params, u.grid)
    return apply_linear_operator(u, params.s, V) - nonlinear_force(u, params)


def gradient_field(u: Field, params: ModelParams, tol: float) -> Field:
    """Riesz representative of E_lambda'(u) in the X_V^s inner product"""
    V = _potential(params, u.grid)
    return solve_linear_operator(residual_field(u, params), params.s, V, tol)


def hls_check(f: Field, g: Field, gamma: float, r: float, t: float) -> HLSCheck:
    """|int (I_gamma * f) g| together with ||f||_r and ||g||_t

    Raises:
        ParameterError: If 1/r + 1/t != 1 + gamma/dim
    """
    dim = f.grid.dim
    if abs(1.0 / r + 1.0 / t - (1.0 + gamma / dim)) > 1e-12:
        raise ParameterError(f"exponents violate 1/r + 1/t = 1 + gamma/N: r={r}, t={t}, gamma={gamma}, N={dim}")
    conv = riesz_convolve(f, gamma)
    lhs = abs(float(np.sum(conv.values * g.values) * f.grid.cell_volume))
    return HLSCheck(lhs=lhs, norm_f=lp_norm(f, r), norm_g=lp_norm(g, t))
