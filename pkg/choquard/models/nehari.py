"""
Nehari-manifold projection and groundstate solves for E_lambda and for the
limit functional J (lambda = 0).
"""
import logging
import math
from typing import Callable, Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict
from scipy import optimize

from .equation import (
    EnergyBreakdown,
    ModelParams,
    energy,
    gradient_field,
    norm_sq,
    potential_field,
    residual_field,
    scale_breakdown,
    validate_params,
)
from .errors import (
    DegenerateInputError,
    NoRootError,
    NonConvergenceError,
    PreconditionError,
    UnsupportedRegimeError,
)
from .spectral_core import Field, GridSpec, concentration_function, gaussian_field, lp_norm, xvs_inner

logger = logging.getLogger('nehari')

# Backtracking line search on E o projection
ARMIJO = 1e-4
SHRINK = 0.5
INITIAL_STEP = 1.0
MIN_STEP = 1e-10

BISECTION_STEPS = 60
NEWTON_TOL = 1e-14

ProgressCallback = Callable[[int, float, float, float], None]


class NehariProjection(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    t: float
    projected: Field
    residual: float
    norm_sq: float


class SolveReport(BaseModel):
    """Iteration history and outcome of a groundstate or sign-changing solve"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: Literal['groundstate', 'nodal'] = 'groundstate'
    iterations: int = 0
    energy_history: List[float] = []
    grad_norm_history: List[float] = []
    residual_history: List[float] = []
    nehari_residual: float = math.nan
    final_energy: float = math.nan
    converged: bool = False
    field: Optional[Field] = None
    min_norm_sq: float = math.inf
    energy_lower_bound: Optional[float] = None
    pde_residual: Optional[float] = None
    concentration: Optional[float] = None
    # sign-changing solves only
    part_norm_history: List[Tuple[float, float]] = []
    scaling_history: List[Tuple[float, float]] = []
    min_part_norm: Optional[float] = None
    nodal_residuals: Optional[Tuple[float, float]] = None

    def to_dict(self) -> Dict[str, object]:
        """Convert the report to a dictionary, without the field"""
        data = self.model_dump(exclude={'field'})
        data['part_norm_history'] = [list(x) for x in self.part_norm_history]
        data['scaling_history'] = [list(x) for x in self.scaling_history]
        return data

    def history_frame(self) -> pd.DataFrame:
        """One row per iteration"""
        frame = pd.DataFrame({
            'iter': np.arange(1, len(self.energy_history) + 1),
            'energy': self.energy_history,
            'grad_norm': self.grad_norm_history,
            'nehari_residual': self.residual_history,
        })
        if self.part_norm_history:
            parts = np.array(self.part_norm_history)
            frame['norm_plus'] = parts[:, 0]
            frame['norm_minus'] = parts[:, 1]
        if self.scaling_history:
            scalings = np.array(self.scaling_history)
            frame['tau0'] = scalings[:, 0]
            frame['theta0'] = scalings[:, 1]
        return frame


class LevelsReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    m_lambda: float
    m_J: float
    t_of_Q: float
    strict: bool
    gap: float
    lambda_report: Optional[SolveReport] = None
    limit_report: Optional[SolveReport] = None

    def to_dict(self) -> Dict[str, object]:
        return {'m_lambda': self.m_lambda, 'm_J': self.m_J, 't_of_Q': self.t_of_Q,
                'strict': self.strict, 'gap': self.gap}


class LDerivative(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float
    on_manifold_value: float
    residual: float


def default_initial_field(grid: GridSpec) -> Field:
    """Centered Gaussian of width L/8 with unit L^2 norm"""
    bump = gaussian_field(grid, grid.box_length / 8.0)
    return bump / lp_norm(bump, 2.0)


def _require_nonzero(u: Field) -> None:
    if u.is_zero():
        raise DegenerateInputError("the zero field has no Nehari projection")


def nehari_residual(u: Field, params: ModelParams) -> float:
    """<E_lambda'(u), u> = ||u||^2 - A(u) - lambda B(u)"""
    _require_nonzero(u)
    breakdown = energy(u, params)
    return breakdown.norm_sq - breakdown.alpha_integral - params.lam * breakdown.beta_integral


def nehari_scaling(S: float, A: float, B: float, p: float, q: float, lam: float) -> float:
    """Unique t > 0 with S = t^{2p-2} A + lam t^{2q-2} B, for lam >= 0 and p > q > 1

    Bracketing by doubling/halving from t = 1, bisection, then a Newton polish.

    Raises:
        NoRootError: If the right-hand side vanishes identically
    """
    if S <= 0 or (A <= 0 and (lam == 0 or B <= 0)):
        raise NoRootError(f"no positive root: S={S}, A={A}, lambda*B={lam * B}")

    def f(t):
        return t ** (2 * p - 2) * A + lam * t ** (2 * q - 2) * B - S

    def fprime(t):
        return (2 * p - 2) * t ** (2 * p - 3) * A + lam * (2 * q - 2) * t ** (2 * q - 3) * B

    lo = hi = 1.0
    for _ in range(2000):
        if f(hi) >= 0:
            break
        hi *= 2.0
    for _ in range(2000):
        if f(lo) <= 0:
            break
        lo *= 0.5
    if f(lo) > 0 or f(hi) < 0:
        raise NoRootError(f"could not bracket the Nehari scaling: S={S}, A={A}, B={B}")
    if lo == hi:
        return lo
    t = optimize.bisect(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                        maxiter=BISECTION_STEPS, disp=False)
    polished = optimize.newton(f, t, fprime=fprime, tol=NEWTON_TOL, maxiter=50, disp=False)
    if lo <= polished <= hi and abs(f(polished)) <= abs(f(t)):
        return float(polished)
    return float(t)


def _project_breakdown(u: Field, breakdown: EnergyBreakdown, params: ModelParams) -> Tuple[float, EnergyBreakdown]:
    t = nehari_scaling(breakdown.norm_sq, breakdown.alpha_integral, breakdown.beta_integral,
                       params.p, params.q, params.lam)
    return t, scale_breakdown(breakdown, t, params)


def _manifold_residual(breakdown: EnergyBreakdown, params: ModelParams) -> float:
    return breakdown.norm_sq - breakdown.alpha_integral - params.lam * breakdown.beta_integral


def project_nehari(u: Field, params: ModelParams) -> NehariProjection:
    """Scale u onto the Nehari manifold

    Raises:
        DegenerateInputError: If u = 0
        UnsupportedRegimeError: If lambda < 0
        NoRootError: If A(u) = B(u) = 0
    """
    _require_nonzero(u)
    if params.lam < 0:
        raise UnsupportedRegimeError(f"lambda={params.lam} < 0: the Nehari scaling is not unique")
    t, scaled = _project_breakdown(u, energy(u, params), params)
    return NehariProjection(t=t, projected=t * u, residual=_manifold_residual(scaled, params),
                            norm_sq=scaled.norm_sq)


def functional_J(u: Field, params: ModelParams) -> float:
    """J(u) = 1/2 ||u||^2 - A(u)/(2p), the lambda = 0 energy"""
    return energy(u, params.with_lambda(0.0)).total


def energy_lower_bound(u: Field, params: ModelParams) -> float:
    """(1/2 - 1/2q) ||u||^2, a lower bound for E_lambda on the Nehari manifold"""
    return (0.5 - 0.5 / params.q) * norm_sq(u, params)


def on_manifold_energies(u: Field, params: ModelParams) -> Tuple[float, float]:
    """The two expressions of E_lambda valid on the Nehari manifold

    Returns:
        (1/2 - 1/2q) S + (1/2q - 1/2p) A  and  (1/2 - 1/2p) A + lambda (1/2 - 1/2q) B
    """
    b = energy(u, params)
    p, q = params.p, params.q
    first = (0.5 - 0.5 / q) * b.norm_sq + (0.5 / q - 0.5 / p) * b.alpha_integral
    second = (0.5 - 0.5 / p) * b.alpha_integral + params.lam * (0.5 - 0.5 / q) * b.beta_integral
    return first, second


def L_derivative_pair(u: Field, params: ModelParams) -> LDerivative:
    """<L'(u), u> for L(u) = <E_lambda'(u), u>, on the Nehari manifold

    Raises:
        PreconditionError: If |<E_lambda'(u), u>| > 1e-6 ||u||^2
    """
    b = energy(u, params)
    S, A, B = b.norm_sq, b.alpha_integral, b.beta_integral
    p, q = params.p, params.q
    residual = S - A - params.lam * B
    if abs(residual) > 1e-6 * S:
        raise PreconditionError(f"field is off the Nehari manifold: residual {residual:.3e}, ||u||^2 {S:.3e}")
    return LDerivative(
        value=2 * S - 2 * p * A - 2 * q * params.lam * B,
        on_manifold_value=2 * (1 - q) * S - 2 * (p - q) * A,
        residual=residual,
    )


def finalize_report(report: SolveReport, u: Field, params: ModelParams) -> SolveReport:
    """Attach the final field and the end-of-run diagnostics"""
    grid = u.grid
    report.field = u
    report.final_energy = energy(u, params).total
    report.energy_lower_bound = energy_lower_bound(u, params)
    report.pde_residual = lp_norm(residual_field(u, params), 2.0)
    report.concentration = concentration_function(u, 2.0, min(1.0, grid.box_length / 4.0))
    return report


def groundstate_solve(params: ModelParams, init: Field, tol: float, max_iter: int,
                      callback: Optional[ProgressCallback] = None,
                      linear_tol: Optional[float] = None) -> SolveReport:
    """Minimize E_lambda on the Nehari manifold by projected Sobolev-gradient descent

    Args:
        params: Groundstate-mode parameters (lambda = 0 solves the limit problem J)
        init: Nonzero starting field
        tol: Target for ||grad||_{X_V^s} and for |residual| / ||u||^2
        max_iter: Iteration cap
        callback: Called as callback(iteration, energy, grad_norm, residual)
        linear_tol: Relative tolerance of the inner linear solves

    Returns:
        SolveReport: Report whose final_energy estimates m_lambda

    Raises:
        DegenerateInputError: If init = 0
        NonConvergenceError: If max_iter is reached or the line search stalls; carries the report
    """
    _require_nonzero(init)
    linear_tol = linear_tol or min(1e-10, 1e-3 * tol)
    V = potential_field(params.potential, init.grid)
    logger.info(f"Starting groundstate solve: lambda={params.lam}, p={params.p}, q={params.q}, "
                f"grid n={init.grid.n}, dim={init.grid.dim}")

    report = SolveReport(kind='groundstate')
    projection = project_nehari(init, params)
    u = projection.projected
    current = scale_breakdown(energy(init, params), projection.t, params)

    for iteration in range(1, max_iter + 1):
        g = gradient_field(u, params, linear_tol)
        g_norm = math.sqrt(max(xvs_inner(g, g, params.s, V), 0.0))
        S = current.norm_sq
        residual = _manifold_residual(current, params)

        report.iterations = iteration
        report.energy_history.append(current.total)
        report.grad_norm_history.append(g_norm)
        report.residual_history.append(residual)
        report.min_norm_sq = min(report.min_norm_sq, S)
        report.nehari_residual = residual
        logger.debug(f"iter {iteration}: E={current.total:.12g}, |g|={g_norm:.3e}, res={residual:.3e}")
        if callback:
            callback(iteration, current.total, g_norm, residual)

        if g_norm <= tol and abs(residual) <= tol * S:
            report.converged = True
            break

        step = INITIAL_STEP
        slack = 8 * np.finfo(float).eps * abs(current.total)
        accepted = None
        while step >= MIN_STEP:
            trial = u - step * g
            if not trial.is_zero():
                t, trial_energy = _project_breakdown(trial, energy(trial, params), params)
                if trial_energy.total <= current.total - ARMIJO * step * g_norm ** 2 + slack:
                    accepted = (t * trial, trial_energy)
                    break
            step *= SHRINK
        if accepted is None:
            logger.warning(f"Line search stalled at iteration {iteration}, |g|={g_norm:.3e}")
            break
        u, current = accepted

    finalize_report(report, u, params)
    if not report.converged:
        last = report.grad_norm_history[-1] if report.grad_norm_history else None
        raise NonConvergenceError(
            f"groundstate solve did not converge in {report.iterations} iterations", last_residual=last,
            report=report)
    logger.info(f"Groundstate solve converged in {report.iterations} iterations, E={report.final_energy:.10g}")
    return report


def compare_levels(params: ModelParams, grid: GridSpec, tol: float, max_iter: int,
                   init: Optional[Field] = None) -> LevelsReport:
    """Compare m_lambda with the level m_J of the limit problem

    Solves the limit problem for Q, projects Q onto the Nehari manifold of
    E_lambda and starts the lambda solve from t(Q) Q.
    """
    validate_params(params)
    if params.mode != 'groundstate':
        raise UnsupportedRegimeError("compare_levels needs groundstate-mode parameters")
    init = init if init is not None else default_initial_field(grid)

    limit_report = groundstate_solve(params.with_lambda(0.0), init, tol, max_iter)
    Q = limit_report.field
    projection = project_nehari(Q, params)
    lambda_report = groundstate_solve(params, projection.projected, tol, max_iter)

    m_lambda, m_J = lambda_report.final_energy, limit_report.final_energy
    gap = m_J - m_lambda
    logger.info(f"Levels: m_lambda={m_lambda:.10g}, m_J={m_J:.10g}, t(Q)={projection.t:.10g}")
    return LevelsReport(m_lambda=m_lambda, m_J=m_J, t_of_Q=projection.t, strict=m_lambda < m_J - tol,
                        gap=gap, lambda_report=lambda_report, limit_report=limit_report)
