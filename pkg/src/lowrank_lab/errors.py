"""Exception hierarchy.

Every exception carries a stable ``reason`` string; the command-line
front end prints it verbatim so scripts can match on it.
"""


class LabError(Exception):
    reason = "lab_error"

    def __init__(self, message="", reason=None):
        super().__init__(message)
        if reason is not None:
            self.reason = reason


class SplittingError(LabError, ValueError):
    reason = "splitting_invalid"


class ShapeError(LabError, ValueError):
    reason = "shape_mismatch"


class CapacityError(LabError, MemoryError):
    reason = "capacity_exceeded"


class NumericalError(LabError, ArithmeticError):
    reason = "svd_no_convergence"


class DomainError(LabError, ValueError):
    reason = "domain_error"


class ConstructionError(LabError, ValueError):
    reason = "construction_error"


class NotSPDError(LabError, ValueError):
    reason = "operator_not_spd"


class InconsistentBoundsError(LabError, ValueError):
    reason = "analytic_bounds_inconsistent"


class DegeneracyError(LabError, ValueError):
    reason = "lambda1_degenerate"


class HypothesisError(LabError, ValueError):
    reason = "hypothesis_unmet"


class ProjectionError(LabError, ValueError):
    reason = "start_not_admissible"

    def __init__(self, message="", violation=None, reason=None):
        super().__init__(message, reason)
        self.violation = violation


class OrthogonalityError(LabError, ValueError):
    reason = "start_orthogonal"


class ConfigError(LabError, ValueError):
    reason = "config_invalid"
