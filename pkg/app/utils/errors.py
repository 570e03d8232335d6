"""Exception hierarchy shared by the solvers and the CLI.

The CLI maps each family to a process exit code (see ``exit_code_for``).
"""


class HeatControlError(Exception):
    """Base class for every error raised by this package."""
    exit_code = 1


class ConfigError(HeatControlError):
    exit_code = 1


class ArgumentError(HeatControlError, ValueError):
    """Bad call arguments: negative dt, mismatched dimensions or grids."""
    exit_code = 1


class InfeasibleError(HeatControlError):
    """The requested radius lies outside the valid range of a problem."""
    exit_code = 2

    def __init__(self, message: str, bound: str | None = None, value: float | None = None):
        super().__init__(message)
        self.bound = bound
        self.value = value


class DegenerateRangeError(InfeasibleError):
    """r >= r_T: the null control already suffices."""


class SolverError(HeatControlError):
    exit_code = 3


class ConvergenceError(SolverError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class DegenerateAdjointError(SolverError):
    """Masked adjoint fell below the floor on an active cell."""

    def __init__(self, message: str, cell: int | None = None, masked_norm: float | None = None):
        super().__init__(message)
        self.cell = cell
        self.masked_norm = masked_norm


class DegenerateTargetError(SolverError):
    """r_T = 0, or the target is hit exactly so r(tau, M) = 0."""


class BracketError(SolverError):
    pass


class OracleError(SolverError):
    pass


class FeedbackInstabilityError(SolverError):
    pass


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, HeatControlError):
        return error.exit_code
    return 1
