"""Monte Carlo and finite-difference solvers for exterior-value Dirichlet
problems of jump-diffusion operators."""

__version__ = "0.1.0"

from .errors import NLDPError  # noqa: F401
from .estimators import Estimate, IdentityReport, solve_dirichlet  # noqa: F401
from .pathsim import SimConfig, simulate  # noqa: F401
from .problem import ProblemSpec, validate_problem  # noqa: F401
