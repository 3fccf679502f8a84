"""
Sign-changing machinery: the u+/u- split, the two-parameter fibering map Phi,
projection onto the nodal Nehari set and the least-energy sign-changing solve.

Sign convention: u+ = max(u, 0) >= 0, u- = min(u, 0) <= 0, u = u+ + u-.
Phi(tau, theta) = E_lambda(tau^{1/2p} u+ + theta^{1/2p} u-).
"""
import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from .equation import (
    ModelParams,
    energy,
    first_variation_pair,
    gradient_field,
    nonlinear_force,
    norm_sq,
    potential_field,
)
from .errors import (
    ConsistencyError,
    DegenerateInputError,
    NodalCollapseError,
    NonConvergenceError,
    UnsupportedConfigurationError,
    UnsupportedRegimeError,
)
from .nehari import (
    ARMIJO,
    INITIAL_STEP,
    MIN_STEP,
    SHRINK,
    ProgressCallback,
    SolveReport,
    finalize_report,
)
from .spectral_core import (
    Field,
    GridSpec,
    fractional_kernel,
    gagliardo_form,
    gaussian_field,
    lp_norm,
    riesz_convolve,
    xvs_inner,
)

logger = logging.getLogger('nodal')

COLLAPSE_THRESHOLD = 1e-12
STATIONARITY_TOL = 1e-12
MULTI_STARTS = ((1.0, 1.0), (0.5, 2.0), (2.0, 0.5), (0.1, 0.1))
MAX_NEWTON_STEPS = 200
PAIRWISE_LIMIT = 20_000_000


class NodalSplit(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    plus: Field
    minus: Field

    @property
    def nontrivial(self) -> bool:
        return not (self.plus.is_zero() or self.minus.is_zero())

    def recombine(self, tau0: float, theta0: float) -> Field:
        return Field(self.plus.grid, tau0 * self.plus.values + theta0 * self.minus.values)


def split_parts(u: Field) -> NodalSplit:
    """Pointwise positive and negative parts; plus + minus == u bit-exactly"""
    return NodalSplit(plus=Field(u.grid, np.maximum(u.values, 0.0)),
                      minus=Field(u.grid, np.minimum(u.values, 0.0)))


def _require_nontrivial(split: NodalSplit) -> None:
    if not split.nontrivial:
        raise DegenerateInputError("field is one-signed: u+ and u- must both be nonzero")


def cross_gagliardo(split: NodalSplit, s: float) -> float:
    """A_cross = -[u+, u-]_{s,2}, which is <= 0"""
    return -gagliardo_form(split.plus, split.minus, s)


def cross_gagliardo_pairwise(split: NodalSplit, s: float) -> float:
    """A_cross by a direct double sum over the supports of u+ and u-

    Uses the discrete kernel K = ifft(|xi|^{2s}) of the spectral operator, so
    the sum reads h^d sum_ij W(i - j) u+_i u-_j with W = -K. This checks the
    support-restricted evaluation against the same discrete operator, not
    against the continuous singular integrand. Small grids only.

    Raises:
        UnsupportedConfigurationError: If the pair count is too large
    """
    grid = split.plus.grid
    plus, minus = split.plus.values, split.minus.values
    i_idx = np.argwhere(plus != 0)
    j_idx = np.argwhere(minus != 0)
    if len(i_idx) == 0 or len(j_idx) == 0:
        return 0.0
    if len(i_idx) * len(j_idx) > PAIRWISE_LIMIT:
        raise UnsupportedConfigurationError(
            f"pairwise cross term needs {len(i_idx) * len(j_idx)} pairs, limit is {PAIRWISE_LIMIT}")

    kernel = fractional_kernel(grid, s)
    diff = (i_idx[:, None, :] - j_idx[None, :, :]) % grid.n
    W = -kernel[tuple(np.moveaxis(diff, -1, 0))]
    u_plus = plus[tuple(i_idx.T)]
    u_minus = minus[tuple(j_idx.T)]
    return float(u_plus @ W @ u_minus * grid.cell_volume)


class PhiCoefficients(BaseModel):
    """Coefficients of Phi

    a1, b1: ||u+||^2, ||u-||^2 in X_V^s
    a2, a3, a4: int (I_alpha*|u+|^p)|u+|^p, the same for u-, and the cross term
    b2, b3, b4: the beta/q analogues
    A_cross: -[u+, u-]_{s,2}
    """
    model_config = ConfigDict(frozen=True)

    a1: float
    b1: float
    a2: float
    a3: float
    a4: float
    b2: float
    b3: float
    b4: float
    A_cross: float
    p: float
    q: float
    lam: float

    def monomials(self) -> List[Tuple[float, float, float]]:
        """Phi as a sum of c * tau^e1 * theta^e2"""
        p, q, lam = self.p, self.q, self.lam
        return [
            (0.5 * self.a1, 1.0 / p, 0.0),
            (0.5 * self.b1, 0.0, 1.0 / p),
            (-self.A_cross, 0.5 / p, 0.5 / p),
            (-self.a2 / (2 * p), 1.0, 0.0),
            (-self.a3 / (2 * p), 0.0, 1.0),
            (-self.a4 / p, 0.5, 0.5),
            (-lam * self.b2 / (2 * q), q / p, 0.0),
            (-lam * self.b3 / (2 * q), 0.0, q / p),
            (-lam * self.b4 / q, 0.5 * q / p, 0.5 * q / p),
        ]

    def value(self, tau: float, theta: float) -> float:
        return sum(c * _power(tau, e1) * _power(theta, e2) for c, e1, e2 in self.monomials())

    def gradient(self, tau: float, theta: float) -> np.ndarray:
        g = np.zeros(2)
        for c, e1, e2 in self.monomials():
            if e1:
                g[0] += c * e1 * tau ** (e1 - 1) * _power(theta, e2)
            if e2:
                g[1] += c * e2 * _power(tau, e1) * theta ** (e2 - 1)
        return g

    def hessian(self, tau: float, theta: float) -> np.ndarray:
        H = np.zeros((2, 2))
        for c, e1, e2 in self.monomials():
            if e1:
                H[0, 0] += c * e1 * (e1 - 1) * tau ** (e1 - 2) * _power(theta, e2)
            if e2:
                H[1, 1] += c * e2 * (e2 - 1) * _power(tau, e1) * theta ** (e2 - 2)
            if e1 and e2:
                H[0, 1] += c * e1 * e2 * tau ** (e1 - 1) * theta ** (e2 - 1)
        H[1, 0] = H[0, 1]
        return H

    def energy_at(self, tau0: float, theta0: float) -> float:
        """E_lambda(tau0 u+ + theta0 u-) assembled from the coefficients"""
        return self.value(tau0 ** (2 * self.p), theta0 ** (2 * self.p))

    def residuals(self) -> Tuple[float, float]:
        """Expanded <E'(u), u+> and <E'(u), u->"""
        plus = self.a1 - self.A_cross - (self.a2 + self.a4) - self.lam * (self.b2 + self.b4)
        minus = self.b1 - self.A_cross - (self.a3 + self.a4) - self.lam * (self.b3 + self.b4)
        return plus, minus

    def scale(self) -> float:
        return (self.a1 + self.b1 + abs(self.A_cross) + self.a2 + self.a3 + 2 * self.a4
                + abs(self.lam) * (self.b2 + self.b3 + 2 * self.b4))


def _power(x: float, e: float) -> float:
    return 1.0 if e == 0 else x ** e


def _pair_integrals(plus: np.ndarray, minus: np.ndarray, grid: GridSpec, gamma: float,
                    r: float) -> Tuple[float, float, float]:
    dens_plus = np.abs(plus) ** r
    dens_minus = np.abs(minus) ** r
    conv_plus = riesz_convolve(Field(grid, dens_plus), gamma).values
    conv_minus = riesz_convolve(Field(grid, dens_minus), gamma).values
    h_d = grid.cell_volume
    return (float(np.sum(conv_plus * dens_plus) * h_d),
            float(np.sum(conv_minus * dens_minus) * h_d),
            float(np.sum(conv_plus * dens_minus) * h_d))


def phi_coefficients(u: Field, params: ModelParams) -> PhiCoefficients:
    """Raises DegenerateInputError for a one-signed u"""
    split = split_parts(u)
    _require_nontrivial(split)
    grid = u.grid
    V = potential_field(params.potential, grid)
    a2, a3, a4 = _pair_integrals(split.plus.values, split.minus.values, grid, params.alpha, params.p)
    if params.lam != 0.0:
        b2, b3, b4 = _pair_integrals(split.plus.values, split.minus.values, grid, params.beta, params.q)
    else:
        b2 = b3 = b4 = 0.0
    return PhiCoefficients(
        a1=xvs_inner(split.plus, split.plus, params.s, V),
        b1=xvs_inner(split.minus, split.minus, params.s, V),
        a2=a2, a3=a3, a4=a4, b2=b2, b3=b3, b4=b4,
        A_cross=cross_gagliardo(split, params.s),
        p=params.p, q=params.q, lam=params.lam,
    )


def phi(u: Field, tau: float, theta: float, params: ModelParams) -> float:
    """E_lambda(tau^{1/2p} u+ + theta^{1/2p} u-) by direct energy evaluation"""
    split = split_parts(u)
    _require_nontrivial(split)
    if tau < 0 or theta < 0:
        raise DegenerateInputError(f"Phi is defined for tau, theta >= 0, got ({tau}, {theta})")
    exponent = 1.0 / (2.0 * params.p)
    return energy(split.recombine(tau ** exponent, theta ** exponent), params).total


class NodalProjection(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    tau0: float
    theta0: float
    projected: Field
    residual_plus: float
    residual_minus: float
    phi_max: float
    start_spread: float


class _Maximizer(BaseModel):
    tau: float
    theta: float
    value: float
    stationarity: float
    converged: bool


def _maximize_from(coeffs: PhiCoefficients, tau: float, theta: float) -> _Maximizer:
    """Damped Newton ascent on Phi from one start, staying in (0, inf)^2"""
    x = np.array([tau, theta], dtype=float)
    value = coeffs.value(*x)
    stationarity = math.inf
    for _ in range(MAX_NEWTON_STEPS):
        g = coeffs.gradient(*x)
        stationarity = float(np.linalg.norm(x * g))
        if stationarity <= STATIONARITY_TOL * (1.0 + abs(value)):
            return _Maximizer(tau=x[0], theta=x[1], value=value, stationarity=stationarity, converged=True)
        H = coeffs.hessian(*x)
        if np.linalg.eigvalsh(H).max() < 0:
            direction = -np.linalg.solve(H, g)
        else:
            # log-space ascent while Newton is not available
            direction = x * (x * g) / (2.0 * (1.0 + abs(value)))

        step = 1.0
        accepted = False
        floor = 4.0 * np.finfo(float).eps * (1.0 + abs(value))
        while step > 1e-16:
            trial = x + step * direction
            if np.all(trial > 0.1 * x) and np.all(trial < 10.0 * x):
                trial_value = coeffs.value(*trial)
                if trial_value >= value - floor:
                    x, value, accepted = trial, trial_value, True
                    break
            step *= 0.5
        if not accepted:
            break
    g = coeffs.gradient(*x)
    stationarity = float(np.linalg.norm(x * g))
    return _Maximizer(tau=x[0], theta=x[1], value=value, stationarity=stationarity,
                      converged=stationarity <= 100 * STATIONARITY_TOL * (1.0 + abs(value)))


def _reference_scaling(coeffs: PhiCoefficients) -> Tuple[float, float]:
    """Maximizers of the a1/a2 and b1/a3 balances, used to scale the multi-starts"""
    k = coeffs.p / (coeffs.p - 1.0)
    tau_ref = (coeffs.a1 / coeffs.a2) ** k if coeffs.a2 > 0 else 1.0
    theta_ref = (coeffs.b1 / coeffs.a3) ** k if coeffs.a3 > 0 else 1.0
    return tau_ref, theta_ref


def maximize_phi(coeffs: PhiCoefficients) -> Tuple[_Maximizer, float]:
    """Best maximizer over the multi-starts and the relative spread of their (tau0, theta0)

    Raises:
        NonConvergenceError: If no start reaches stationarity
    """
    tau_ref, theta_ref = _reference_scaling(coeffs)
    results = [_maximize_from(coeffs, a * tau_ref, b * theta_ref) for a, b in MULTI_STARTS]
    converged = [r for r in results if r.converged]
    best = max(results, key=lambda r: r.value)
    if not converged:
        raise NonConvergenceError(
            f"Phi maximization stalled at (tau, theta)=({best.tau:.6g}, {best.theta:.6g}), "
            f"stationarity {best.stationarity:.3e}", last_residual=best.stationarity, report=best)
    best = max(converged, key=lambda r: r.value)
    exponent = 1.0 / (2.0 * coeffs.p)
    scalings = np.array([[r.tau ** exponent, r.theta ** exponent] for r in converged])
    reference = np.array([best.tau ** exponent, best.theta ** exponent])
    spread = float(np.max(np.abs(scalings - reference) / reference))
    if spread > 1e-8:
        logger.warning(f"Nodal projection multi-starts disagree: relative spread {spread:.3e}")
    return best, spread


def _require_nodal(params: ModelParams) -> None:
    if params.mode != 'nodal':
        raise UnsupportedRegimeError("nodal operations need nodal-mode parameters")


def project_nodal(u: Field, params: ModelParams) -> NodalProjection:
    """Scale the parts of u separately onto the nodal set

    Finds the maximizer (tau*, theta*) of Phi and returns
    tau0 u+ + theta0 u- with (tau0, theta0) = (tau*, theta*)^{1/2p}.

    Raises:
        DegenerateInputError: If u is one-signed
        NonConvergenceError: If the maximization stalls from every start
    """
    _require_nodal(params)
    coeffs = phi_coefficients(u, params)
    best, spread = maximize_phi(coeffs)
    exponent = 1.0 / (2.0 * params.p)
    tau0, theta0 = best.tau ** exponent, best.theta ** exponent
    projected = split_parts(u).recombine(tau0, theta0)
    residual_plus, residual_minus = _direct_residuals(projected, params)
    return NodalProjection(tau0=tau0, theta0=theta0, projected=projected, residual_plus=residual_plus,
                           residual_minus=residual_minus, phi_max=best.value, start_spread=spread)


def _direct_residuals(u: Field, params: ModelParams) -> Tuple[float, float]:
    split = split_parts(u)
    force = nonlinear_force(u, params)
    return (first_variation_pair(u, split.plus, params, force=force),
            first_variation_pair(u, split.minus, params, force=force))


def nodal_residuals(u: Field, params: ModelParams) -> Tuple[float, float]:
    """(<E'(u), u+>, <E'(u), u->), checked against the coefficient expansion

    Raises:
        ConsistencyError: If the two paths disagree beyond 1e-8 relative
    """
    direct = _direct_residuals(u, params)
    split = split_parts(u)
    if not split.nontrivial:
        return direct
    coeffs = phi_coefficients(u, params)
    expanded = coeffs.residuals()
    scale = coeffs.scale()
    for name, d, e in zip(('plus', 'minus'), direct, expanded):
        if abs(d - e) > 1e-8 * scale:
            raise ConsistencyError(f"nodal residual ({name}) disagrees with its expansion: {d!r} vs {e!r}")
    return direct


class ConcavityReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    samples: int
    max_eigenvalues: List[float]
    worst: float
    at_maximizer: float
    diagonal_second_difference: float
    concave: bool


def _fd_hessian(coeffs: PhiCoefficients, tau: float, theta: float, rel_step: float) -> np.ndarray:
    ht, hh = rel_step * tau, rel_step * theta
    f = coeffs.value
    f0 = f(tau, theta)
    H = np.empty((2, 2))
    H[0, 0] = (f(tau + ht, theta) - 2 * f0 + f(tau - ht, theta)) / ht ** 2
    H[1, 1] = (f(tau, theta + hh) - 2 * f0 + f(tau, theta - hh)) / hh ** 2
    H[0, 1] = H[1, 0] = (f(tau + ht, theta + hh) - f(tau + ht, theta - hh)
                         - f(tau - ht, theta + hh) + f(tau - ht, theta - hh)) / (4 * ht * hh)
    return H


def phi_concavity_check(u: Field, params: ModelParams, samples: int = 100, seed: int = 0,
                        rel_step: float = 1e-4) -> ConcavityReport:
    """Sample central-difference Hessians of Phi around its maximizer

    Points are drawn from [0.05, 4) x (tau*, theta*) in the substituted
    variables. Concave iff every sampled max eigenvalue is below 1e-8 and the
    diagonal slice has negative second differences.
    """
    coeffs = phi_coefficients(u, params)
    best, _ = maximize_phi(coeffs)
    rng = np.random.default_rng(seed)
    factors = rng.uniform(0.05, 4.0, size=(samples, 2))
    eigs = [float(np.linalg.eigvalsh(_fd_hessian(coeffs, best.tau * a, best.theta * b, rel_step)).max())
            for a, b in factors]
    at_max = float(np.linalg.eigvalsh(coeffs.hessian(best.tau, best.theta)).max())

    diagonal = -math.inf
    for t in rng.uniform(0.05, 4.0, size=samples) * math.sqrt(best.tau * best.theta):
        h = rel_step * t
        second = (coeffs.value(t + h, t + h) - 2 * coeffs.value(t, t) + coeffs.value(t - h, t - h)) / h ** 2
        diagonal = max(diagonal, second)

    worst = max(eigs) if eigs else -math.inf
    return ConcavityReport(samples=samples, max_eigenvalues=eigs, worst=worst, at_maximizer=at_max,
                           diagonal_second_difference=diagonal,
                           concave=worst < 1e-8 and diagonal < 0 and at_max < 0)


def domination_check(u: Field, params: ModelParams, points: int = 5, upper: float = 2.0) -> float:
    """max over (tau, theta) in [0, upper]^2 of E(tau u+ + theta u-) - E(u)

    Non-positive (up to rounding) when u lies on the nodal set.
    """
    split = split_parts(u)
    _require_nontrivial(split)
    base = energy(u, params).total
    worst = -math.inf
    for tau in np.linspace(0.0, upper, points):
        for theta in np.linspace(0.0, upper, points):
            worst = max(worst, energy(split.recombine(tau, theta), params).total - base)
    return float(worst)


def energy_nonsplitting(u: Field, params: ModelParams) -> float:
    """E(u) - E(u+) - E(u-)"""
    split = split_parts(u)
    return energy(u, params).total - energy(split.plus, params).total - energy(split.minus, params).total


def dipole_initial_field(grid: GridSpec) -> Field:
    """Antisymmetric pair of opposite-sign Gaussians, width L/12, L/3 apart, unit L^2 norm"""
    L = grid.box_length
    center = np.zeros(grid.dim)
    center[0] = L / 6.0
    bump = gaussian_field(grid, L / 12.0, center)
    dipole = (bump - bump.reflected()) * 0.5
    return dipole / lp_norm(dipole, 2.0)


def _part_norms(split: NodalSplit) -> Tuple[float, float]:
    return lp_norm(split.plus, 2.0), lp_norm(split.minus, 2.0)


def signchanging_solve(params: ModelParams, init: Field, tol: float, max_iter: int,
                       callback: Optional[ProgressCallback] = None,
                       linear_tol: Optional[float] = None) -> SolveReport:
    """Minimize E_lambda on the nodal set by descent with nodal re-projection

    Every trial step u - eta g is re-projected with project_nodal; the step is
    accepted by the Armijo rule on the projected energy.

    Raises:
        DegenerateInputError: If init is one-signed
        NodalCollapseError: If a part norm falls below 1e-12
        NonConvergenceError: If max_iter is reached or the line search stalls
    """
    _require_nodal(params)
    linear_tol = linear_tol or min(1e-10, 1e-3 * tol)
    V = potential_field(params.potential, init.grid)
    logger.info(f"Starting sign-changing solve: lambda={params.lam}, p={params.p}, q={params.q}, "
                f"grid n={init.grid.n}, dim={init.grid.dim}")

    report = SolveReport(kind='nodal')
    projection = project_nodal(init, params)
    u, current = projection.projected, projection.phi_max
    scaling = (projection.tau0, projection.theta0)

    for iteration in range(1, max_iter + 1):
        split = split_parts(u)
        norms = _part_norms(split)
        if min(norms) < COLLAPSE_THRESHOLD:
            report.field = u
            raise NodalCollapseError(f"nodal part collapsed at iteration {iteration}: norms {norms}",
                                     last_residual=min(norms), report=report)
        r_plus, r_minus = _direct_residuals(u, params)
        g = gradient_field(u, params, linear_tol)
        g_norm = math.sqrt(max(xvs_inner(g, g, params.s, V), 0.0))
        S = norm_sq(u, params)

        report.iterations = iteration
        report.energy_history.append(current)
        report.grad_norm_history.append(g_norm)
        report.residual_history.append(max(abs(r_plus), abs(r_minus)))
        report.part_norm_history.append(norms)
        report.scaling_history.append(scaling)
        report.min_part_norm = min(norms) if report.min_part_norm is None else min(report.min_part_norm, *norms)
        report.min_norm_sq = min(report.min_norm_sq, S)
        report.nehari_residual = r_plus + r_minus
        report.nodal_residuals = (r_plus, r_minus)
        logger.debug(f"iter {iteration}: E={current:.12g}, |g|={g_norm:.3e}, r+={r_plus:.3e}, r-={r_minus:.3e}")
        if callback:
            callback(iteration, current, g_norm, max(abs(r_plus), abs(r_minus)))

        if g_norm <= tol and max(abs(r_plus), abs(r_minus)) <= tol * S:
            report.converged = True
            break

        step = INITIAL_STEP
        slack = 8 * np.finfo(float).eps * abs(current)
        accepted = None
        while step >= MIN_STEP:
            trial = u - step * g
            if split_parts(trial).nontrivial:
                try:
                    coeffs = phi_coefficients(trial, params)
                    best, _ = maximize_phi(coeffs)
                except NonConvergenceError:
                    best = None
                if best is not None and best.value <= current - ARMIJO * step * g_norm ** 2 + slack:
                    accepted = (trial, best)
                    break
            step *= SHRINK
        if accepted is None:
            logger.warning(f"Line search stalled at iteration {iteration}, |g|={g_norm:.3e}")
            break
        trial, best = accepted
        exponent = 1.0 / (2.0 * params.p)
        tau0, theta0 = best.tau ** exponent, best.theta ** exponent
        u = split_parts(trial).recombine(tau0, theta0)
        current = best.value
        scaling = (tau0, theta0)

    finalize_report(report, u, params)
    if not report.converged:
        last = report.grad_norm_history[-1] if report.grad_norm_history else None
        raise NonConvergenceError(
            f"sign-changing solve did not converge in {report.iterations} iterations", last_residual=last,
            report=report)
    logger.info(f"Sign-changing solve converged in {report.iterations} iterations, E={report.final_energy:.10g}")
    return report
