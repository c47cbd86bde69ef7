"""Exception types shared across the package."""


class PhyTaylorError(Exception):
    """Base class for all library errors."""


class InvalidArgument(PhyTaylorError, ValueError):
    pass


class DimensionMismatch(PhyTaylorError, ValueError):
    pass


class PlanInconsistent(PhyTaylorError, ValueError):
    """A layer plan cannot be assembled into a valid cascade."""


class KnowledgeUnrepresentable(PhyTaylorError, ValueError):
    pass


class ConditionViolated(PhyTaylorError, ValueError):
    """Suppressor parameters break |rho| >= |h + w| * |kappa|."""


class SingularDNR(PhyTaylorError, ZeroDivisionError):
    pass


class NonFiniteValue(PhyTaylorError, FloatingPointError):
    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class TrainingDiverged(PhyTaylorError, FloatingPointError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class ModelNotPolynomial(PhyTaylorError, ValueError):
    pass


class Unrevisable(PhyTaylorError, ValueError):
    pass


class NoRealSolution(PhyTaylorError, ArithmeticError):
    pass


class DegenerateQuadratic(PhyTaylorError, ArithmeticError):
    pass


class UnsupportedDimension(PhyTaylorError, ValueError):
    pass


class ParseError(PhyTaylorError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class HashMismatch(PhyTaylorError, ValueError):
    pass


class VersionUnknown(PhyTaylorError, ValueError):
    pass
