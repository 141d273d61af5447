"""
Experiment Runner
Builds a problem from an experiment configuration, runs the configured solver,
compares against dense oracles and writes the report artifacts
"""

import numpy as np
import pandas as pd
import time
from dataclasses import asdict, dataclass, field, fields
from dotenv import dotenv_values
from typing import Dict, List, Optional, Tuple
import logging
import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config import (CHECK_EVERY, DEFAULT_METHOD, DEFAULT_PROBLEM, DEFAULT_SEED, DEFAULT_TOL, M_MAX,
                    ORACLE_MAX_DIM, OUTPUT_DIR)

from .bdf_newton import BDFNewtonOptions, solve_ndre_bdf_newton
from .eba_driver import LowRankSolution, SolverOptions, solve_ndre
from .error_bounds import error_bound_report
from .exceptions import ConfigError, NDREError, OracleScaleError
from .operators import low_rank_difference_norm, low_rank_product_norm
from .problem import (NDREProblem, TransportParams, build_guo_problem, build_transport_problem,
                      load_problem_files)
from .reference_oracles import integrate_dense, solve_ndre_direct_exp
from .report_io import write_comparison, write_solution_bundle

logger = logging.getLogger(__name__)

PROBLEM_KINDS = ('transport', 'guo', 'file')
ORACLES = ('none', 'direct-exp', 'dense-bdf')

# method name -> (solver family, inner integrator or BDF order)
METHODS = {
    'eba-exp': ('krylov', 'exp'),
    'eba-bdf1': ('krylov', 'bdf1'),
    'eba-bdf2': ('krylov', 'bdf2'),
    'eba-bdf3': ('krylov', 'bdf3'),
    'eba-rosenbrock': ('krylov', 'rosenbrock2'),
    'bdf1-newton-ba': ('newton', 1),
}

# KEY in an experiment file -> (ExperimentConfig field, parser)
CONFIG_KEYS = {
    'PROBLEM__KIND': ('problem', str),
    'PROBLEM__N': ('n', int),
    'PROBLEM__C': ('c', float),
    'PROBLEM__ALPHA': ('alpha', float),
    'PROBLEM__SEED': ('seed', int),
    'PROBLEM__A': ('a_path', str),
    'PROBLEM__D': ('d_path', str),
    'PROBLEM__S': ('s_path', str),
    'PROBLEM__F': ('f_path', str),
    'PROBLEM__G': ('g_path', str),
    'PROBLEM__Z01': ('z01_path', str),
    'PROBLEM__Z02': ('z02_path', str),
    'SOLVER__METHOD': ('method', str),
    'SOLVER__METHODS': ('methods', lambda v: [m.strip() for m in v.split(',') if m.strip()]),
    'SOLVER__H': ('h', float),
    'SOLVER__TF': ('t_f', float),
    'SOLVER__TOL': ('tol', float),
    'SOLVER__CHECK_EVERY': ('check_every', int),
    'SOLVER__M_MAX': ('m_max', int),
    'SOLVER__GRID_STEP': ('grid_step', float),
    'RUN__ORACLE': ('oracle', str),
    'RUN__OUT': ('out', str),
    'RUN__BOUNDS': ('bounds', lambda v: v.strip().lower() in ('1', 'true', 'yes', 'on')),
}


@dataclass
class ExperimentConfig:
    """One experiment: problem, method(s), oracle and output location"""

    problem: str = DEFAULT_PROBLEM
    n: int = 40
    c: float = 0.5
    alpha: float = 0.5
    seed: int = DEFAULT_SEED
    a_path: Optional[str] = None
    d_path: Optional[str] = None
    s_path: Optional[str] = None
    f_path: Optional[str] = None
    g_path: Optional[str] = None
    z01_path: Optional[str] = None
    z02_path: Optional[str] = None
    method: str = DEFAULT_METHOD
    methods: List[str] = field(default_factory=list)
    h: float = 0.01
    t_f: float = 1.0
    tol: float = DEFAULT_TOL
    check_every: int = CHECK_EVERY
    m_max: int = M_MAX
    grid_step: Optional[float] = None
    oracle: str = 'none'
    out: str = OUTPUT_DIR
    bounds: bool = False
    sources: Dict[str, Tuple[str, Optional[int]]] = field(default_factory=dict, repr=False)

    def _fail(self, name: str, message: str):
        key, line = self.sources.get(name, (name, None))
        raise ConfigError(message, field=key, line=line)

    def validate(self) -> 'ExperimentConfig':
        if self.problem not in PROBLEM_KINDS:
            self._fail('problem', f"unknown problem '{self.problem}' (expected one of {PROBLEM_KINDS})")
        if self.problem != 'file' and self.n < 1:
            self._fail('n', f"n must be a positive integer, got {self.n}")
        if self.problem == 'file':
            for name in ('a_path', 'd_path', 's_path', 'f_path', 'g_path'):
                if not getattr(self, name):
                    self._fail(name, f"file problems need {name}")
        for name in [self.method] + list(self.methods):
            if name not in METHODS:
                self._fail('methods' if name in self.methods else 'method',
                           f"unknown method '{name}' (expected one of {sorted(METHODS)})")
        if self.oracle not in ORACLES:
            self._fail('oracle', f"unknown oracle '{self.oracle}' (expected one of {ORACLES})")
        for name in ('h', 't_f', 'tol'):
            if not getattr(self, name) > 0:
                self._fail(name, f"{name} must be positive, got {getattr(self, name)}")
        if self.grid_step is not None and not 0 < self.grid_step <= self.t_f:
            self._fail('grid_step', f"grid_step must lie in (0, t_f], got {self.grid_step}")
        for name in ('check_every', 'm_max'):
            if getattr(self, name) < 1:
                self._fail(name, f"{name} must be a positive integer")
        return self

    def output_grid(self) -> Optional[np.ndarray]:
        """Evenly spaced output times; a 0.1 spacing is used when an oracle is requested"""
        step = self.grid_step
        if step is None and self.oracle != 'none':
            step = min(0.1, self.t_f)
        if step is None:
            return None
        count = int(round(self.t_f / step))
        grid = np.round(step * np.arange(1, count + 1), 12)
        return np.unique(np.concatenate([grid[grid <= self.t_f], [self.t_f]]))

    def to_dict(self) -> Dict:
        data = asdict(self)
        data.pop('sources')
        return data


def _key_lines(path: str) -> Dict[str, int]:
    lines = {}
    with open(path) as f:
        for number, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith('#') or '=' not in line:
                continue
            if line.startswith('export '):
                line = line[len('export '):]
            lines[line.split('=', 1)[0].strip()] = number
    return lines


def load_experiment_config(path: Optional[str] = None, overrides: Optional[Dict] = None) -> ExperimentConfig:
    """
    Experiment settings from a KEY=VALUE file, then command-line overrides

    Args:
        path: Experiment file with PROBLEM__*, SOLVER__* and RUN__* keys
        overrides: ExperimentConfig field -> value; None values are ignored

    Returns:
        Validated ExperimentConfig

    Raises:
        ConfigError: unknown key or invalid value, naming the key and its line
    """
    config = ExperimentConfig()
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"experiment file not found: {path}")
        lines = _key_lines(path)
        for key, value in dotenv_values(path).items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown setting '{key}'", field=key, line=lines.get(key))
            name, parse = CONFIG_KEYS[key]
            if value is None or value == '':
                raise ConfigError("missing value", field=key, line=lines.get(key))
            try:
                setattr(config, name, parse(value))
            except ValueError as e:
                raise ConfigError(f"invalid value '{value}': {e}", field=key, line=lines.get(key))
            config.sources[name] = (key, lines.get(key))

    valid = {f.name for f in fields(ExperimentConfig)} - {'sources'}
    for name, value in (overrides or {}).items():
        if value is None:
            continue
        if name not in valid:
            raise ConfigError(f"unknown override '{name}'", field=name)
        setattr(config, name, value)
        config.sources[name] = (f"--{name.replace('_', '-')}", None)
    return config.validate()


def relative_difference(a: LowRankSolution, b: LowRankSolution) -> float:
    """‖X_a(t_f) - X_b(t_f)‖_F / ‖X_b(t_f)‖_F from the factors, never formed densely"""
    pa, pb = a.final, b.final
    base = low_rank_product_norm(pb.Z1, pb.Z2)
    difference = low_rank_difference_norm(pa.Z1, pa.Z2, pb.Z1, pb.Z2)
    return difference / base if base > 0 else difference


class ExperimentRunner:
    """Runs one configured experiment or a method comparison"""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self._problem: Optional[NDREProblem] = None

    @property
    def problem(self) -> NDREProblem:
        if self._problem is None:
            self._problem = self.build_problem()
        return self._problem

    def build_problem(self) -> NDREProblem:
        cfg = self.config
        if cfg.problem == 'transport':
            return build_transport_problem(TransportParams(cfg.n, cfg.c, cfg.alpha))
        if cfg.problem == 'guo':
            return build_guo_problem(cfg.n, cfg.seed)
        return load_problem_files(cfg.a_path, cfg.d_path, cfg.s_path, cfg.f_path, cfg.g_path,
                                  cfg.z01_path, cfg.z02_path)

    def solve(self, method: str) -> LowRankSolution:
        cfg = self.config
        family, setting = METHODS[method]
        grid = cfg.output_grid()
        logger.info(f"Solving {self.problem.name} (n={self.problem.n}) with {method}")
        if family == 'krylov':
            opts = SolverOptions(m_max=cfg.m_max, check_every=cfg.check_every, tol_rel=cfg.tol,
                                 inner=setting, h=cfg.h, t_f=cfg.t_f, t_grid=grid)
            solution = solve_ndre(self.problem, opts)
        else:
            opts = BDFNewtonOptions(t_grid=grid, krylov='block')
            solution = solve_ndre_bdf_newton(self.problem, setting, cfg.h, cfg.t_f, opts)
        solution.report.method = method
        return solution

    def oracle_comparison(self, solution: LowRankSolution) -> pd.DataFrame:
        """Per output time: X₁₁ of both, max |X₁₁ difference|, max entrywise and relative Frobenius differences"""
        cfg = self.config
        if cfg.oracle == 'direct-exp':
            reference = solve_ndre_direct_exp(self.problem, solution.times)
        else:
            reference = integrate_dense(self.problem, h=cfg.h / 10.0, t_f=cfg.t_f, order=2,
                                        t_grid=solution.times, max_dim=ORACLE_MAX_DIM)

        rows = []
        for t, pair in zip(solution.times, solution.factors):
            X = pair.to_dense()
            X_ref = reference.value_at(t)
            ref_norm = float(np.linalg.norm(X_ref))
            rows.append({
                'time': float(t),
                'x11': float(X[0, 0]),
                'x11_oracle': float(X_ref[0, 0]),
                'x11_abs_diff': float(abs(X[0, 0] - X_ref[0, 0])),
                'max_abs_diff': float(np.max(np.abs(X - X_ref))),
                'rel_fro_diff': float(np.linalg.norm(X - X_ref) / ref_norm) if ref_norm > 0
                else float(np.linalg.norm(X - X_ref)),
            })
        return pd.DataFrame(rows)

    def run(self) -> Dict:
        """
        Solve, optionally compare with an oracle and bound the error, then write artifacts

        Returns:
            Summary with converged flag, final residual and artifact paths
        """
        cfg = self.config
        solution = self.solve(cfg.method)
        extra = {'problem': self.problem.describe(), 'experiment': cfg.to_dict()}

        oracle_frame = None
        if cfg.oracle != 'none':
            try:
                oracle_frame = self.oracle_comparison(solution)
                extra['oracle'] = {'name': cfg.oracle,
                                   'max_x11_abs_diff': float(oracle_frame['x11_abs_diff'].max()),
                                   'max_rel_fro_diff': float(oracle_frame['rel_fro_diff'].max())}
            except OracleScaleError as e:
                logger.warning(f"oracle skipped: {e}")
                extra['oracle'] = {'name': cfg.oracle, 'skipped': str(e)}

        if cfg.bounds:
            if solution.stateA is None:
                solution.report.bounds = {'skipped': 'bounds need Krylov bases'}
            else:
                try:
                    solution.report.bounds = error_bound_report(self.problem, solution)
                except OracleScaleError as e:
                    logger.warning(f"error bound skipped: {e}")
                    solution.report.bounds = {'skipped': str(e)}

        paths = write_solution_bundle(solution, cfg.out, extra)
        if oracle_frame is not None:
            paths.update(write_comparison(oracle_frame, cfg.out))
        return {'method': cfg.method, 'converged': solution.converged,
                'final_residual': solution.residual, 'paths': paths,
                'oracle': extra.get('oracle'), 'bounds': solution.report.bounds}

    def compare(self, methods: Optional[List[str]] = None) -> pd.DataFrame:
        """
        Run every method on the same problem and tabulate residuals, timings and pairwise differences

        A failing method is reported in its row; the others still run.
        """
        methods = list(methods or self.config.methods)
        if len(methods) < 2:
            raise ConfigError("compare needs at least two methods", field='SOLVER__METHODS')
        unknown = [m for m in methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown} (expected one of {sorted(METHODS)})",
                              field='SOLVER__METHODS')

        solutions: Dict[str, LowRankSolution] = {}
        rows = []
        for method in methods:
            tic = time.perf_counter()
            row = {'method': method}
            try:
                solution = self.solve(method)
                solutions[method] = solution
                row.update({'status': 'ok' if solution.converged else 'not-converged',
                            'residual_rel': solution.residual, 'rank': solution.final.rank, 'error': ''})
            except NDREError as e:
                logger.error(f"Error running {method}: {e}")
                row.update({'status': 'failed', 'residual_rel': np.nan, 'rank': np.nan, 'error': str(e)})
            row['wall_seconds'] = time.perf_counter() - tic
            rows.append(row)

        for row in rows:
            for other in methods:
                column = f'diff_vs_{other}'
                if row['method'] in solutions and other in solutions:
                    row[column] = relative_difference(solutions[row['method']], solutions[other])
                else:
                    row[column] = np.nan

        frame = pd.DataFrame(rows)
        write_comparison(frame, self.config.out)
        return frame
