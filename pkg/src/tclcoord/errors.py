"""Exception types shared across the package."""


class TclCoordError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(TclCoordError, ValueError):
    """A constructor or operation received out-of-range parameters."""


class AssumptionViolationError(TclCoordError):
    """The drift-sign assumption fails somewhere on the temperature grid."""


class CflViolationError(TclCoordError):
    """Time step exceeds the stability bound of the rate matrix."""

    def __init__(self, message, bin_index=None, bound_minutes=None):
        super().__init__(message)
        self.bin_index = bin_index
        self.bound_minutes = bound_minutes


class FactorizationError(TclCoordError):
    """Reconstructed transition matrix deviates from its factors."""

    def __init__(self, message, max_deviation=None):
        super().__init__(message)
        self.max_deviation = max_deviation


class PolicyStructureError(TclCoordError, ValueError):
    """A randomized policy has nonzero probability outside its support."""


class ConstraintResidualError(TclCoordError):
    """Inputs to policy extraction violate the planning constraints."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SolverCapError(TclCoordError):
    """The QP solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message, best_x=None, residuals=None):
        super().__init__(message)
        self.best_x = best_x
        self.residuals = residuals


class ConfigError(TclCoordError):
    """A scenario configuration violates a module precondition."""
