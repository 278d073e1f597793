"""Exception types shared across the package."""


class CechGlueError(Exception):
    """Base class for all library errors."""


class ParseError(CechGlueError):
    """Malformed expression text. Carries the 0-based offset of the problem."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class UnknownSymbolError(ParseError):
    """Symbol outside the declared coordinate/parameter context."""


class StepDerivativeError(CechGlueError):
    """A differentiation path reached a step() node."""


class EvaluationError(CechGlueError):
    """Domain error or unassigned symbol during numeric evaluation."""


class QuadratureError(CechGlueError):
    """Adaptive quadrature failed to converge within the subdivision budget."""


class DimensionError(CechGlueError):
    """Dimension or degree mismatch between forms, maps or covers."""


class NerveError(CechGlueError):
    """A required simplex or simplex chart is not declared in the nerve."""


class CoverValidationError(CechGlueError):
    """A cover invariant failed during a hard check."""


class ProviderError(CechGlueError):
    """A reference-primitive provider violated its residual contract."""


class ReconstructionError(CechGlueError):
    """A reconstruction pipeline identity failed beyond tolerance."""


class NotExactError(ReconstructionError):
    """Closed but non-exact input detected. Carries the obstruction size."""

    def __init__(self, message, defect):
        super().__init__(f"{message} (defect {defect:.9g})")
        self.defect = float(defect)


class GluingError(CechGlueError):
    """Point outside the cover, or branch mismatch above tolerance."""


class ScenarioError(CechGlueError):
    """Scenario file is missing required blocks or is inconsistent."""
