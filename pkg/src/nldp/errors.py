"""Exception hierarchy. Each class carries the CLI exit category it maps to."""


class NLDPError(Exception):
    category = "error"


class ValidationError(NLDPError):
    category = "validation"


class ConfigError(ValidationError):
    category = "config"


class PreconditionError(ValidationError):
    category = "precondition"


class EvaluationFailure(NLDPError):
    category = "evaluation"


class QuadratureFailure(NLDPError):
    category = "quadrature"


class SimulationError(NLDPError):
    category = "simulation"


class NonExit(SimulationError):
    category = "non_exit"


class JumpBudgetExceeded(SimulationError):
    category = "jump_budget"


class TruncationBudgetExceeded(SimulationError):
    category = "truncation_budget"


class UnsupportedKernel(NLDPError):
    category = "unsupported_kernel"


class UnsupportedCoefficient(NLDPError):
    category = "unsupported_coefficient"


class AtomOffGrid(NLDPError):
    category = "atom_off_grid"


class SingularSystem(NLDPError):
    category = "singular_system"

    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = list(rows)
