"""Exceptions raised by aggne, each tied to a command line exit status."""

from __future__ import annotations


class AggneError(Exception):
    """Base class of all aggne errors."""

    exit_code = 1


class ValidationError(AggneError, ValueError):
    """Inputs violate a documented invariant."""

    exit_code = 2


class ParseError(ValidationError):
    """Configuration document could not be parsed.

    Parameters
    ----------
    message : str
        Description of the problem.
    location : str, optional
        Position in the document, either ``line:column`` or a dotted key path,
        by default None
    """

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        if location is not None:
            message = f"{location}: {message}"
        super().__init__(message)


class DisconnectedGraph(ValidationError):
    pass


class NotStochastic(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


ShapeMismatch = DimensionMismatch


class NotStronglyConvex(ValidationError):
    pass


class DegenerateSpectralGap(ValidationError):
    pass


class IterationMismatch(ValidationError):
    pass


class SingularKKT(ValidationError):
    pass


class GradientMismatch(ValidationError):
    """Finite differences disagree with a gradient callback."""

    def __init__(self, player: int, argument: str, deviation: float):
        self.player = player
        self.argument = argument
        self.deviation = deviation
        super().__init__(
            f"Gradient {argument} of player {player} deviates from central finite "
            f"differences by {deviation:.3e} (relative)."
        )


class DivergenceError(AggneError, ArithmeticError):
    """A numerical procedure failed to produce a finite or converged result."""

    exit_code = 3


class NonFiniteValue(DivergenceError):
    """An iterate contains NaN or Inf."""

    def __init__(self, k: int, message: str | None = None):
        self.k = k
        self.trace = None
        super().__init__(message or f"Non-finite value produced at iteration k={k}.")


class NoConvergence(DivergenceError):
    """An iterative oracle did not reach its tolerance."""

    def __init__(self, max_iters: int, residual: float):
        self.max_iters = max_iters
        self.residual = residual
        super().__init__(
            f"No convergence within {max_iters} iterations (residual {residual:.3e})."
        )


class DiagnosticsViolation(AggneError, AssertionError):
    """A proven inequality failed numerically."""

    exit_code = 4

    def __init__(self, k: int, component: str, margin: float):
        self.k = k
        self.component = component
        self.margin = margin
        self.report = None
        super().__init__(
            f"{type(self).__name__} at k={k}, component {component}: margin {margin:.3e}"
        )


class RecursionViolated(DiagnosticsViolation):
    pass


class ContractionViolated(DiagnosticsViolation):
    pass


class OutputError(AggneError, OSError):
    """Writing an output file failed."""

    exit_code = 5
