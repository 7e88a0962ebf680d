"""Exception and warning types shared across the package."""


class FlatctlError(Exception):
    """Base class for all package errors."""


class NonIntegrable(FlatctlError):
    """An integrand with an endpoint exponent <= -1 was touched."""


class ToleranceNotMet(FlatctlError):
    """Quadrature refinement budget exhausted before reaching the tolerance."""


class SolveFailure(FlatctlError):
    """A linear two-point solve produced a singular or unusable system."""


class IntegrationFailure(FlatctlError):
    """ODE propagation failed (step control collapse or non-finite state)."""


class BracketFailure(FlatctlError):
    """Eigenvalue bracketing search exceeded its doubling budget."""


class FitDegenerate(FlatctlError):
    """A least-squares bound fit has no usable data (all values vanish)."""


class OrderTooHigh(FlatctlError):
    """Contour differentiation requested too close to a flat-region endpoint."""


class SchemaError(FlatctlError):
    """Configuration text violates the documented schema."""

    def __init__(self, messages):
        if isinstance(messages, str):
            messages = [messages]
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


class SingularMatrix(FlatctlError):
    """Simulator linear system is singular (degenerate Robin elimination)."""


class DomainError(FlatctlError):
    """Parameters outside the range the method covers (e.g. mu > 1/4)."""


class PipelineError(FlatctlError):
    """Wraps an upstream error with the pipeline stage where it occurred."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}': {cause}")


class TruncationWarning(UserWarning):
    """A truncated series ended on a term that is not yet negligible."""


class DivergenceWarning(UserWarning):
    """Partial sums of an expansion grow instead of settling."""


class StabilityWarning(UserWarning):
    """Trapezoidal time stepping oscillated; fell back to implicit Euler."""
