"""Exception types raised by the solver library."""


class HelmFoslsError(Exception):
    """Base class for all library errors."""


class InvalidGeometry(HelmFoslsError):
    pass


class NonMatchingMesh(HelmFoslsError):
    pass


class ClosureDiverged(HelmFoslsError):
    pass


class LevelNotInHierarchy(HelmFoslsError):
    pass


class NonNestedSpaces(HelmFoslsError):
    pass


class NonNestedMeshes(HelmFoslsError):
    pass


class MeshMismatch(HelmFoslsError):
    pass


class QuadratureNonConvergent(HelmFoslsError):
    pass


class SingularPatch(HelmFoslsError):
    pass


class DegreeMismatch(HelmFoslsError):
    pass


class NotHPD(HelmFoslsError):
    pass


class DimCapExceeded(HelmFoslsError):
    pass


class BadInterval(HelmFoslsError):
    pass


class Breakdown(HelmFoslsError):
    pass


class NoNegativeRitzYet(HelmFoslsError):
    pass


class UnknownProblem(HelmFoslsError):
    pass


class MaxIterations(HelmFoslsError):
    """MINRES hit its iteration cap; the partial report is attached."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class LucklessBreakdown(HelmFoslsError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report
