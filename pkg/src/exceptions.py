"""
Exception hierarchy for the NDRE toolkit
"""

from typing import Dict, Optional


class NDREError(Exception):
    """Base class for all solver errors"""


class ProblemDefinitionError(NDREError):
    """Invalid problem data or parameters"""


class DimensionError(NDREError):
    """Operands with inconsistent shapes"""


class SingularOperatorError(NDREError):
    """An inverse application was requested on a (numerically) singular operator"""


class SingularSylvesterError(NDREError):
    """The spectra of the two Sylvester coefficients (nearly) intersect"""


class MatrixExponentialOverflow(NDREError):
    """Matrix exponential overflowed; carries the 1-norm of the argument"""

    def __init__(self, message: str, norm: float = float('nan')):
        super().__init__(message)
        self.norm = norm


class ConditioningError(NDREError):
    """A quotient Z·Y⁻¹ could not be formed with acceptable conditioning"""


class OracleScaleError(NDREError):
    """A dense oracle was asked to materialize a matrix beyond the size cap"""


class ConvergenceError(NDREError):
    """An iteration did not reach its tolerance"""

    def __init__(self, message: str, residual: float = float('nan'),
                 diagnostics: Optional[Dict] = None):
        super().__init__(message)
        self.residual = residual
        self.diagnostics = diagnostics or {}


class ConfigError(NDREError):
    """Invalid experiment configuration"""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        location = ''
        if field is not None:
            location = f" [{field}"
            if line is not None:
                location += f", line {line}"
            location += "]"
        super().__init__(message + location)
        self.field = field
        self.line = line
