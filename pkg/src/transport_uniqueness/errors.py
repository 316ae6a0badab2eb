"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class TransportError(Exception):
    """Base class for every error raised by this package."""


# expressions
class ParseError(TransportError):
    def __init__(self, position: int, expected: str, source: str = ""):
        self.position = position
        self.expected = expected
        self.source = source
        super().__init__(f"parse error at offset {position}: expected {expected}")


class DimensionError(TransportError):
    def __init__(self, name: str, dim: int, position: int | None = None):
        self.name = name
        self.dim = dim
        self.position = position
        super().__init__(f"variable {name!r} exceeds declared dimension d={dim}")


class EvalError(TransportError):
    def __init__(self, op: str, point=None, detail: str = ""):
        self.op = op
        self.point = point
        msg = f"evaluation of {op} failed"
        if point is not None:
            msg += f" at {point}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DerivativeError(EvalError):
    pass


# flows
class StepFailure(TransportError):
    def __init__(self, t: float, detail: str = ""):
        self.t = t
        super().__init__(f"step size controller stalled at t={t!r}" + (f": {detail}" if detail else ""))


class CertificateFailure(TransportError):
    def __init__(self, violations, message: str = ""):
        self.violations = list(violations)
        super().__init__(message or f"escape certificate violated at {len(self.violations)} sampled (x, t) pairs")


# quadrature / 1d analysis
class QuadratureError(TransportError):
    def __init__(self, panel: tuple[float, float], detail: str = ""):
        self.panel = panel
        super().__init__(f"adaptive quadrature did not converge on panel {panel}" + (f": {detail}" if detail else ""))


class NonPositiveIntegrand(TransportError):
    def __init__(self, x: float, value: float):
        self.x = x
        self.value = value
        super().__init__(f"integrand must be strictly positive on the tail, got {value!r} at x={x!r}")


class SignViolation(TransportError):
    pass


class GluingFailure(TransportError):
    def __init__(self, edge: float, value: float, tol: float):
        self.edge = edge
        self.value = value
        self.tol = tol
        super().__init__(f"|b*h| = {value:.3e} near support edge {edge!r} exceeds glue_tol={tol:.1e}")


# particles
class NegativeDensity(TransportError):
    pass


# matrix lab
class ScenarioError(TransportError):
    pass


class SmallnessViolation(ScenarioError):
    pass


class SingularResolvent(ScenarioError):
    pass


# cli
class SchemaError(TransportError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")
