"""Exception hierarchy shared by every fragvol module."""


class FragvolError(Exception):
    """Base class for all errors raised by fragvol."""


# mesh / time grid
class MeshError(FragvolError):
    pass


class NonpositiveWidth(MeshError):
    pass


class BandViolation(MeshError):
    pass


class NonpositiveHorizon(MeshError):
    pass


# kernels
class KernelError(FragvolError):
    pass


class QuadratureFailure(KernelError):
    pass


class UnboundedKernel(KernelError):
    pass


class CouplingBoundViolation(KernelError):
    """A coupling function exceeds ``b_i(y) <= y`` somewhere on ``(N, R)``."""


class ExpressionError(KernelError):
    pass


# solver
class SolverError(FragvolError):
    pass


class NegativeInitialData(SolverError):
    pass


class NonFiniteState(SolverError):
    pass


class DegenerateModel(SolverError):
    pass


class InvariantViolation(SolverError):
    """A runtime invariant failed; ``step`` is the offending step index."""

    def __init__(self, message, step=None, invariant=None):
        super().__init__(message)
        self.step = step
        self.invariant = invariant


# diagnostics
class DiagnosticsError(FragvolError):
    pass


class GridMismatch(DiagnosticsError):
    pass


class DivisionByZeroDenominator(DiagnosticsError):
    pass


class NonpositiveError(DiagnosticsError):
    pass


# configuration
class ConfigError(FragvolError):
    """Configuration problems, collected and reported together."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
