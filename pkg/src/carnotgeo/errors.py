"""Exception hierarchy shared by every carnotgeo module."""

from __future__ import annotations


class CarnotGeoError(Exception):
    """Base class for all library errors."""


# algebra -------------------------------------------------------------------
class IndexOutOfRange(CarnotGeoError, IndexError):
    pass


class InvalidStratification(CarnotGeoError, ValueError):
    pass


class InvalidAlgebra(CarnotGeoError, ValueError):
    """Raised when a group is built from a tensor that fails validation."""

    def __init__(self, report):
        self.report = report
        super().__init__("; ".join(report.failures[:5]) or "invalid algebra")


class UnsupportedStep(CarnotGeoError, NotImplementedError):
    pass


class NegativeDilation(CarnotGeoError, ValueError):
    pass


class UnsupportedNormForGroup(CarnotGeoError, ValueError):
    pass


# expressions ---------------------------------------------------------------
class ExprSyntaxError(CarnotGeoError, ValueError):
    """Malformed expression text; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} at offset {offset}")


class UnknownIdentifier(CarnotGeoError, ValueError):
    pass


class ArityError(CarnotGeoError, ValueError):
    pass


class DomainError(CarnotGeoError, ArithmeticError):
    pass


class NonDifferentiable(CarnotGeoError, ArithmeticError):
    pass


# surfaces and operators ----------------------------------------------------
class DegenerateDefiningFunction(CarnotGeoError, ValueError):
    pass


class CharacteristicPoint(CarnotGeoError, ValueError):
    pass


class ChartExtractionFailed(CarnotGeoError, ValueError):
    pass


class EmptyActiveSet(CarnotGeoError, ValueError):
    pass


class SolverFailure(CarnotGeoError, RuntimeError):
    pass


# checks --------------------------------------------------------------------
class DegenerateSlicing(CarnotGeoError, ValueError):
    pass


class TooFewRadii(CarnotGeoError, ValueError):
    pass


class NoCurvatureLowerBound(CarnotGeoError, ValueError):
    pass


class NoCandidates(CarnotGeoError, ValueError):
    pass


class NotClosedSurface(CarnotGeoError, ValueError):
    pass


class NotUNC(CarnotGeoError, ValueError):
    pass


class RadiusTooLarge(CarnotGeoError, ValueError):
    pass


class HypothesisFailure(CarnotGeoError, ValueError):
    pass


class UnresolvedBall(CarnotGeoError, ValueError):
    """The sample grid puts too few nodes inside a test function's support."""
