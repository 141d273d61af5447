"""
Configuration for the NDRE solver toolkit
Defaults may be overridden through environment variables or a .env file
"""

import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Application Settings
TOOL_VERSION = '1.0.0'
DEBUG = os.getenv('DEBUG', 'False').lower() == 'true'
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
OUTPUT_DIR = os.getenv('OUTPUT_DIR', 'results')

# Krylov driver
DEFAULT_TOL = float(os.getenv('DEFAULT_TOL', '1e-10'))
CHECK_EVERY = int(os.getenv('CHECK_EVERY', '5'))
M_MAX = int(os.getenv('M_MAX', '100'))
DEFLATION_TOL = float(os.getenv('DEFLATION_TOL', '1e-12'))

# Low-rank truncation
TRUNC_TOL = float(os.getenv('TRUNC_TOL', '1e-12'))
R_MAX = int(os.getenv('R_MAX', '100'))

# Newton (outer) and Krylov-Sylvester (inner) iterations
NEWTON_TOL = float(os.getenv('NEWTON_TOL', '1e-10'))
NEWTON_MAXIT = int(os.getenv('NEWTON_MAXIT', '10'))
INNER_TOL = float(os.getenv('INNER_TOL', '1e-12'))
INNER_MAXIT = int(os.getenv('INNER_MAXIT', '50'))

# Projected integrators
ROSENBROCK_GAMMA = float(os.getenv('ROSENBROCK_GAMMA', str(1.0 + 1.0 / 2.0 ** 0.5)))
SUBSTEP_LIMIT = int(os.getenv('SUBSTEP_LIMIT', '20'))
SUBSTEP_SCALE = float(os.getenv('SUBSTEP_SCALE', '1.0'))

# Dense oracles
ORACLE_MAX_DIM = int(os.getenv('ORACLE_MAX_DIM', '2000'))

# Experiment runner
DEFAULT_PROBLEM = os.getenv('DEFAULT_PROBLEM', 'transport')
DEFAULT_METHOD = os.getenv('DEFAULT_METHOD', 'eba-bdf1')
DEFAULT_SEED = int(os.getenv('DEFAULT_SEED', '0'))
