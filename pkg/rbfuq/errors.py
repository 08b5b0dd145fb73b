__all__ = (
    "RbfUqError",
    "MeshError",
    "OutOfDomain",
    "NonConvergence",
    "SingularSystem",
    "RootBracketingFailure",
    "DimensionTooLarge",
    "SolverFailure",
    "ShapeMismatch",
    "EmptySelection",
    "SingularInterpolationMatrix",
    "NegativeEigenvalueBeyondTolerance",
    "UnsupportedLevel",
    "RuleDistributionMismatch",
    "EmptyEstimator",
    "EvaluationError",
    "ConfigError",
    "MeshMismatch",
    "StageError",
    "TooManySimulations",
    "ConditioningWarning",
    "NonPositiveCoefficient",
)


class RbfUqError(Exception):
    """Generic exception happened in a computation. Base exception for all library exceptions."""

    def __init__(self, msg):
        super().__init__(msg)


class MeshError(RbfUqError):
    """A mesh failed validation or could not be read."""

    pass


class OutOfDomain(RbfUqError):
    """A spatial point lies outside the computational domain."""

    pass


class NonConvergence(RbfUqError):
    """Newton's method reached the iteration limit without meeting the tolerance."""

    def __init__(self, iterations, residual_norm):
        self.iterations = iterations
        self.residual_norm = residual_norm
        super().__init__(f"Newton did not converge in {iterations} iterations (residual {residual_norm:.3e}).")


class SingularSystem(RbfUqError):
    """The linearized system could not be solved, or the diffusion coefficient became non-positive."""

    pass


class RootBracketingFailure(RbfUqError):
    """A root of the KL characteristic equation could not be isolated in its interval."""

    pass


class DimensionTooLarge(RbfUqError):
    """The requested dimension exceeds what the sequence generator supports."""

    pass


class SolverFailure(RbfUqError):
    """A deterministic solve failed for one column of a design."""

    def __init__(self, index, cause):
        self.index = index
        self.cause = cause
        super().__init__(f"Solver failed at design point {index}: {cause}")


class ShapeMismatch(RbfUqError):
    """Array shapes are inconsistent with what the operation expects."""

    pass


class EmptySelection(RbfUqError):
    """A reduction policy retained no parameters."""

    pass


class SingularInterpolationMatrix(RbfUqError):
    """The RBF interpolation system is singular (duplicate or degenerate centers, or an ill-suited kernel)."""

    pass


class NegativeEigenvalueBeyondTolerance(RbfUqError):
    """The Gram matrix has a negative eigenvalue too large to be roundoff."""

    pass


class UnsupportedLevel(RbfUqError):
    """The sparse grid level is not supported."""

    pass


class RuleDistributionMismatch(RbfUqError):
    """The quadrature rule does not match the distribution of the variables."""

    pass


class EmptyEstimator(RbfUqError):
    """A quantile estimate was requested before any sample was seen."""

    pass


class EvaluationError(RbfUqError):
    """A sample evaluator failed while streaming samples into estimators."""

    def __init__(self, completed, cause):
        self.completed = completed
        self.cause = cause
        super().__init__(f"Evaluation failed after {completed} samples: {cause}")


class ConfigError(RbfUqError):
    """The pipeline configuration is malformed or inconsistent."""

    def __init__(self, msg, line=None, col=None):
        self.line = line
        self.col = col
        if line is not None:
            msg = f"line {line}, col {col}: {msg}"
        super().__init__(msg)


class MeshMismatch(RbfUqError):
    """Two runs that are compared were computed on different meshes."""

    pass


class StageError(RbfUqError):
    """A pipeline stage failed. Partial outputs written before the failure are preserved."""

    def __init__(self, stage, exit_code, cause):
        self.stage = stage
        self.exit_code = exit_code
        self.cause = cause
        super().__init__(f"Stage '{stage}' failed: {cause}")


class TooManySimulations(RbfUqError):
    """Too many deterministic solves were dispatched."""

    pass


class ConditioningWarning(UserWarning):
    """The interpolation matrix is badly conditioned."""

    pass


class NonPositiveCoefficient(UserWarning):
    """A diffusion coefficient value at or below zero was evaluated."""

    pass
