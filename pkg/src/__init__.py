"""
NDRE Low-Rank Solver Package
"""

from .problem import NDREProblem, TransportParams, build_guo_problem, build_transport_problem
from .eba_driver import LowRankSolution, SolverOptions, solve_ndre
from .bdf_newton import BDFNewtonOptions, solve_ndre_bdf_newton
from .experiment_runner import ExperimentRunner, load_experiment_config

__version__ = "1.0.0"
__author__ = "NDRE Solver Toolkit"

__all__ = ['NDREProblem', 'TransportParams', 'build_guo_problem', 'build_transport_problem',
           'LowRankSolution', 'SolverOptions', 'solve_ndre', 'BDFNewtonOptions',
           'solve_ndre_bdf_newton', 'ExperimentRunner', 'load_experiment_config']
