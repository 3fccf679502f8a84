"""
Run orchestration shared by the command line and the HTTP service.

A run is one command (solve-ground, solve-nodal, compare-levels, verify,
sweep) executed against a RunConfig; it writes report.json and CSV
artifacts into its output directory.
"""
import json
import logging
import os
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator
from pydantic import Field as PydanticField

from .. import config as settings
from .equation import ModelParams, PotentialSpec, validate_params
from .errors import (
    ChoquardError,
    DegenerateInputError,
    NodalCollapseError,
    NonConvergenceError,
    ParameterError,
    UnsupportedConfigurationError,
    UnsupportedRegimeError,
)
from .nehari import ProgressCallback, SolveReport, compare_levels, default_initial_field, groundstate_solve
from .nodal import dipole_initial_field, signchanging_solve
from .spectral_core import Field, GridSpec, gaussian_field, make_grid, write_field, write_field_csv
from .verify import (
    brezis_lieb_local,
    brezis_lieb_nonlocal,
    brezis_lieb_pairing,
    energy_splitting,
    fd_convergence_order,
    gradient_fd_suite,
    hls_sweep,
    random_profile,
)

logger = logging.getLogger('run_manager')

COMMANDS = ('solve-ground', 'solve-nodal', 'compare-levels', 'verify', 'sweep')
VERIFY_VERBS = ('bl-local', 'bl-nonlocal', 'bl-pairing', 'energy-split', 'hls', 'grad')

EXIT_CODES = {'ok': 0, 'validation': 2, 'nonconv': 3, 'collapse': 4, 'io': 5}

DEFAULTS: Dict[str, Any] = {
    'dim': 3, 'n': 32, 'box': 16.0, 's': 0.5, 'alpha': 2.0, 'beta': 2.0, 'p': 2.2, 'q': 1.8,
    'lambda': 0.5, 'potential': 'const:1', 'tol': 1e-6, 'max_iter': 500, 'seed': 0, 'count': 20,
    'lambdas': [0.02, 0.1, 0.5],
}


class RunConfig(BaseModel):
    """A fully validated command"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    command: Literal['solve-ground', 'solve-nodal', 'compare-levels', 'verify', 'sweep']
    verb: Optional[Literal['bl-local', 'bl-nonlocal', 'bl-pairing', 'energy-split', 'hls', 'grad']] = None
    model: ModelParams
    grid: GridSpec
    tol: float = PydanticField(default=1e-6, gt=0.0, le=1e-2)
    max_iter: int = PydanticField(default=500, ge=1, le=1_000_000)
    seed: int = 0
    count: int = PydanticField(default=20, ge=1)
    lambdas: Tuple[float, ...] = (0.02, 0.1, 0.5)
    out: str = settings.OUTPUT_DIR
    field_out: Optional[str] = None

    @model_validator(mode='after')
    def _check_command(self) -> 'RunConfig':
        if self.command == 'solve-nodal' and self.model.mode != 'nodal':
            raise ValueError("solve-nodal requires nodal-mode parameters")
        if self.command in ('solve-ground', 'compare-levels', 'sweep') and self.model.mode != 'groundstate':
            raise ValueError(f"{self.command} requires groundstate-mode parameters")
        if self.command == 'verify' and self.verb is None:
            raise ValueError(f"verify needs one of {', '.join(VERIFY_VERBS)}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            'command': self.command, 'verb': self.verb, 'params': self.model.to_dict(),
            'grid': self.grid.to_dict(), 'tol': self.tol, 'max_iter': self.max_iter,
            'seed': self.seed, 'potential_compact_sublevels': self.model.potential.compact_sublevels,
        }


def _mode_for(command: str, values: Dict[str, Any]) -> str:
    if values.get('mode'):
        return values['mode']
    return 'nodal' if command == 'solve-nodal' else 'groundstate'


def _potential_from(values: Dict[str, Any]) -> PotentialSpec:
    if values.get('potential.family'):
        return PotentialSpec.parse(f"{values['potential.family']}:{values.get('potential.params', '')}")
    potential = values.get('potential') or DEFAULTS['potential']
    return potential if isinstance(potential, PotentialSpec) else PotentialSpec.parse(str(potential))


def build_config(values: Dict[str, Any]) -> RunConfig:
    """Build and validate a RunConfig from flat key/value pairs (config keys, CLI flags or a JSON body)

    Raises:
        ParameterError: If a parameter or the command/mode pairing is invalid
    """
    merged = {**DEFAULTS, **{k: v for k, v in values.items() if v is not None}}
    command = merged.get('command')
    if command not in COMMANDS:
        raise ParameterError(f"unknown command {command!r}, expected one of {', '.join(COMMANDS)}")
    try:
        model = ModelParams(
            dim=int(merged['dim']), s=float(merged['s']), alpha=float(merged['alpha']),
            beta=float(merged['beta']), p=float(merged['p']), q=float(merged['q']),
            lam=float(merged['lambda']), potential=_potential_from(merged), mode=_mode_for(command, merged),
        )
        validate_params(model)
        grid = make_grid(int(merged['dim']), int(merged['n']), float(merged['box']))
        return RunConfig(
            command=command, verb=merged.get('verb'), model=model, grid=grid,
            tol=float(merged['tol']), max_iter=int(merged['max_iter']), seed=int(merged['seed']),
            count=int(merged['count']), lambdas=tuple(float(x) for x in merged['lambdas']),
            out=str(merged.get('out') or settings.OUTPUT_DIR), field_out=merged.get('field_out'),
        )
    except ValidationError as e:
        messages = [err['msg'] for err in e.errors()]
        raise ParameterError('; '.join(messages), messages) from e


def classify_error(error: BaseException) -> str:
    """Map an exception onto the exit-status taxonomy"""
    if isinstance(error, (ParameterError, UnsupportedRegimeError, UnsupportedConfigurationError,
                          DegenerateInputError, ValidationError)):
        return 'validation'
    if isinstance(error, NodalCollapseError):
        return 'collapse'
    if isinstance(error, (NonConvergenceError, ChoquardError)):
        return 'nonconv'
    if isinstance(error, OSError):
        return 'io'
    return 'nonconv'


class RunResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    status: Literal['ok', 'validation', 'nonconv', 'collapse', 'io']
    report: Dict[str, Any]
    artifacts: List[str] = []

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.status]


def _solve_summary(report: SolveReport) -> Dict[str, Any]:
    data = report.to_dict()
    data['residuals'] = {
        'nehari': report.nehari_residual,
        'grad_norm': report.grad_norm_history[-1] if report.grad_norm_history else None,
        'pde': report.pde_residual,
    }
    if report.nodal_residuals is not None:
        data['residuals']['nodal_plus'], data['residuals']['nodal_minus'] = report.nodal_residuals
    return data


def _initial_field(config: RunConfig) -> Field:
    """Default profile for seed 0, otherwise a seeded random profile"""
    if config.command == 'solve-nodal':
        return dipole_initial_field(config.grid)
    if config.seed == 0:
        return default_initial_field(config.grid)
    profile = random_profile(config.grid, np.random.default_rng(config.seed))
    return Field(config.grid, np.abs(profile.values))


class Runner:
    """Executes one RunConfig and writes its artifacts"""

    def __init__(self, config: RunConfig, out_dir: Optional[str] = None, progress: Optional[ProgressCallback] = None):
        self.config = config
        self.out_dir = out_dir or config.out
        self.progress = progress
        self.artifacts: List[str] = []

    def _path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def _write_frame(self, frame: pd.DataFrame, name: str) -> None:
        path = self._path(name)
        frame.to_csv(path, index=False, float_format='%.17g')
        self.artifacts.append(path)

    def _write_field(self, u: Optional[Field]) -> None:
        if u is None or not self.config.field_out:
            return
        path = self.config.field_out
        if path.endswith('.csv'):
            write_field_csv(u, path)
        else:
            write_field(u, path)
        self.artifacts.append(path)

    def _write_report(self, report: Dict[str, Any]) -> None:
        path = self._path('report.json')
        with open(path, 'w') as handle:
            json.dump(report, handle, indent=2, sort_keys=True)
        self.artifacts.insert(0, path)

    def execute(self) -> RunResult:
        """Run the command; never raises for solver failures, the status carries them"""
        config = self.config
        started = time.perf_counter()
        report: Dict[str, Any] = config.to_dict()
        try:
            os.makedirs(self.out_dir, exist_ok=True)
            handler = getattr(self, '_run_' + config.command.replace('-', '_'))
            report.update(handler())
            status = 'ok'
        except Exception as e:
            status = classify_error(e)
            logger.error(f"Run {config.command} failed with status {status}: {e}", exc_info=True)
            report['error'] = str(e)
            partial = getattr(e, 'report', None)
            if isinstance(partial, SolveReport):
                report.update(_solve_summary(partial))
                try:
                    self._write_frame(partial.history_frame(), 'history.csv')
                except OSError as write_error:
                    logger.error(f"Could not write partial history to {self.out_dir}: {write_error}")
                    report['error'] = f"{e}; {write_error}"
                    status = 'io'
        report['status'] = status
        report['wall_time'] = time.perf_counter() - started
        try:
            self._write_report(report)
        except OSError as e:
            logger.error(f"Could not write report to {self.out_dir}: {e}")
            status = 'io'
        return RunResult(status=status, report=report, artifacts=self.artifacts)

    def _run_solve_ground(self) -> Dict[str, Any]:
        config = self.config
        report = groundstate_solve(config.model, _initial_field(config), config.tol, config.max_iter,
                                   callback=self.progress)
        self._write_frame(report.history_frame(), 'history.csv')
        self._write_field(report.field)
        return _solve_summary(report)

    def _run_solve_nodal(self) -> Dict[str, Any]:
        config = self.config
        report = signchanging_solve(config.model, _initial_field(config), config.tol, config.max_iter,
                                    callback=self.progress)
        self._write_frame(report.history_frame(), 'history.csv')
        self._write_field(report.field)
        return _solve_summary(report)

    def _run_compare_levels(self) -> Dict[str, Any]:
        config = self.config
        levels = compare_levels(config.model, config.grid, config.tol, config.max_iter)
        self._write_frame(levels.lambda_report.history_frame(), 'history.csv')
        self._write_frame(levels.limit_report.history_frame(), 'history_limit.csv')
        self._write_field(levels.lambda_report.field)
        data = levels.to_dict()
        data['iterations'] = levels.lambda_report.iterations + levels.limit_report.iterations
        data['final_energy'] = levels.m_lambda
        data['residuals'] = {'nehari': levels.lambda_report.nehari_residual,
                             'limit_nehari': levels.limit_report.nehari_residual}
        return data

    def _verify_profiles(self) -> Tuple[Field, Field, List[float]]:
        grid = self.config.grid
        L = grid.box_length
        u = gaussian_field(grid, L / 32.0)
        w = gaussian_field(grid, L / 32.0, amplitude=0.4)
        translations = list(np.linspace(L / 8.0, L / 3.0, 6))
        return u, w, translations

    def _run_verify(self) -> Dict[str, Any]:
        config = self.config
        model, grid = config.model, config.grid
        verb = config.verb
        if verb == 'hls':
            exponent = 2.0 * grid.dim / (grid.dim + model.alpha)
            sweep = hls_sweep(grid, model.alpha, exponent, exponent, config.count, config.seed)
            self._write_frame(sweep.to_frame(), 'hls.csv')
            return {'max_ratio': sweep.max_ratio, 'exponents': [exponent, exponent]}
        if verb == 'grad':
            check = gradient_fd_suite(model, grid, config.count, config.seed)
            slope = fd_convergence_order(model, grid, seed=config.seed)
            self._write_frame(pd.DataFrame({'sample': np.arange(len(check.errors)), 'rel_error': check.errors}),
                              'gradient.csv')
            return {'max_rel_error': check.max_rel_error, 'epsilon': check.epsilon, 'fd_order': slope}

        u, w, translations = self._verify_profiles()
        if verb == 'bl-local':
            curve = brezis_lieb_local(w, u, translations, model.p, model.p)
        elif verb == 'bl-nonlocal':
            curve = brezis_lieb_nonlocal(u, w, translations, model.alpha, model.p)
        elif verb == 'bl-pairing':
            curve = brezis_lieb_pairing(u, w, u, translations, model.alpha, model.p)
        else:
            curve = energy_splitting(u, w, translations, model)
        self._write_frame(curve.to_frame(), 'curve.csv')
        data = {'distances': curve.distances, 'errors': curve.errors, 'terminal_ratio': curve.terminal_ratio}
        if curve.offsets is not None:
            data['offsets'] = curve.offsets
            data['offset_ratio'] = curve.offset_ratio
        return data

    def _run_sweep(self) -> Dict[str, Any]:
        """One groundstate solve per lambda on a worker pool"""
        config = self.config
        points = {}
        with ThreadPoolExecutor(max_workers=settings.WORKERS) as executor:
            futures = {}
            for lam in config.lambdas:
                point = config.model_copy(update={'command': 'solve-ground',
                                                  'model': config.model.with_lambda(lam),
                                                  'field_out': None})
                runner = Runner(point, out_dir=os.path.join(self.out_dir, f"lambda_{lam!r}"))
                futures[executor.submit(runner.execute)] = lam
            for future in as_completed(futures):
                lam = futures[future]
                points[lam] = future.result()
                logger.info(f"Sweep point lambda={lam} finished with status {points[lam].status}")

        rows = []
        for lam in config.lambdas:
            result = points[lam]
            rows.append({'lambda': lam, 'status': result.status,
                         'iterations': result.report.get('iterations'),
                         'final_energy': result.report.get('final_energy'),
                         'converged': result.report.get('converged')})
            self.artifacts.extend(result.artifacts)
        self._write_frame(pd.DataFrame(rows), 'summary.csv')
        failed = [row['lambda'] for row in rows if row['status'] != 'ok']
        if failed:
            raise NonConvergenceError(f"sweep points failed: {failed}")
        return {'points': rows, 'iterations': sum(row['iterations'] or 0 for row in rows)}


class Run:
    """One run tracked by the HTTP service"""

    def __init__(self, id: str, config: RunConfig, out_dir: str):
        self.id = id
        self.config = config
        self.out_dir = out_dir
        self.status = "created"  # created, running, completed, error
        self.result: Optional[RunResult] = None
        self.iteration = 0
        self.last_energy: Optional[float] = None
        self.last_grad_norm: Optional[float] = None
        self.start_time: Optional[float] = None
        self.end_time: Optional[float] = None
        self.error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "command": self.config.command,
            "verb": self.config.verb,
            "params": self.config.model.to_dict(),
            "grid": self.config.grid.to_dict(),
            "status": self.status,
            "exit_status": self.result.status if self.result else None,
            "out_dir": self.out_dir,
            "start_time": self.start_time,
            "end_time": self.end_time,
            "error": self.error,
        }


class RunManager:
    """Keeps runs and executes them on background threads"""

    def __init__(self, output_dir: Optional[str] = None):
        self.output_dir = output_dir or settings.OUTPUT_DIR
        self.runs: Dict[str, Run] = {}
        self.threads: Dict[str, threading.Thread] = {}
        self.lock = threading.Lock()

    def create_run(self, values: Dict[str, Any]) -> str:
        """Validate the values and register a run

        Raises:
            ParameterError: If the configuration is invalid
        """
        config = build_config(values)
        run_id = str(uuid.uuid4())
        out_dir = values.get('out') or os.path.join(self.output_dir, run_id)
        with self.lock:
            self.runs[run_id] = Run(id=run_id, config=config, out_dir=out_dir)
        logger.info(f"Created run {run_id}: {config.command}")
        return run_id

    def start_run(self, run_id: str) -> bool:
        run = self.runs.get(run_id)
        if not run or run.status != "created":
            return False
        run.status = "running"
        run.start_time = time.time()

        def progress(iteration, energy, grad_norm, residual):
            run.iteration = iteration
            run.last_energy = energy
            run.last_grad_norm = grad_norm

        def run_task():
            try:
                run.result = Runner(run.config, out_dir=run.out_dir, progress=progress).execute()
                run.status = "completed" if run.result.status == 'ok' else "error"
                run.error = run.result.report.get('error')
            except Exception as e:
                logger.error(f"Run {run_id} crashed: {e}", exc_info=True)
                run.status = "error"
                run.error = str(e)
            run.end_time = time.time()

        thread = threading.Thread(target=run_task)
        thread.daemon = True
        thread.start()
        self.threads[run_id] = thread
        return True

    def wait(self, run_id: str, timeout: Optional[float] = None) -> None:
        thread = self.threads.get(run_id)
        if thread:
            thread.join(timeout)

    def get_run(self, run_id: str) -> Optional[Run]:
        return self.runs.get(run_id)

    def delete_run(self, run_id: str) -> bool:
        """Forget a run that is not running"""
        with self.lock:
            run = self.runs.get(run_id)
            if not run or run.status == "running":
                return False
            del self.runs[run_id]
            self.threads.pop(run_id, None)
        return True

    def get_report(self, run_id: str) -> Optional[Dict[str, Any]]:
        run = self.runs.get(run_id)
        if not run or run.result is None:
            return None
        return run.result.report

    def get_progress(self, run_id: str) -> Optional[Dict[str, Any]]:
        run = self.runs.get(run_id)
        if not run:
            return None
        max_iter = run.config.max_iter
        return {
            "status": run.status,
            "iteration": run.iteration,
            "max_iter": max_iter,
            "progress_percentage": round(min(100.0, 100.0 * run.iteration / max_iter), 1),
            "last_energy": run.last_energy,
            "last_grad_norm": run.last_grad_norm,
        }
