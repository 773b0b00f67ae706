"""Exception hierarchy shared by all solver modules."""


class SparseCareError(Exception):
    """Base class for every error raised by this package."""


class SingularMatrix(SparseCareError):
    pass


class NotSymmetric(SparseCareError):
    pass


class DimensionMismatch(SparseCareError):
    pass


class SizeCapExceeded(SparseCareError):
    pass


class MissingFile(SparseCareError):
    pass


class SingularJ4(SparseCareError):
    """The algebraic block is singular, so the model is not index 1."""


class FeedthroughNotSupported(SparseCareError):
    """The Riccati solvers assume a model without direct feedthrough."""


class SingularPencil(SparseCareError):
    pass


class ImaginaryAxisEigenvalue(SparseCareError):
    pass


class NoStabilizingSolution(SparseCareError):
    pass


class UnstablePencil(SparseCareError):
    pass


class NotStabilizable(SparseCareError):
    pass


class EmptySpectralData(SparseCareError):
    pass


class ArnoldiBreakdown(SparseCareError):
    pass


class SingularShiftedSystem(SparseCareError):
    pass


class IndefiniteProjectedSolution(SparseCareError):
    pass


class DivergenceDetected(SparseCareError):
    pass


class UnstableClosedLoop(SparseCareError):
    pass


class ZeroImaginaryShift(SparseCareError):
    pass


class UnstableBlowup(SparseCareError):
    """Simulation output exceeded the blow-up bound.

    The samples computed before the abort are kept in ``partial``.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class NonConvergence(SparseCareError):
    """Iteration budget exhausted; ``result`` holds the last iterate."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
