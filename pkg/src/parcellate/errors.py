"""Exception and warning types raised across the pipeline.

Every failure the CLI maps to exit status 1 derives from :class:`ParcellateError`.
"""


class ParcellateError(Exception):
    """Base class for all typed pipeline errors."""


# -- file formats -----------------------------------------------------------

class FormatError(ParcellateError):
    pass


class BadMagic(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class EmptyFile(FormatError):
    pass


class NonFiniteCoordinate(FormatError):
    pass


class MalformedRow(FormatError):
    pass


class UnsortedPoints(FormatError):
    pass


class IoFailure(ParcellateError):
    pass


class InvalidStreamline(ParcellateError):
    """A streamline violates its invariants (fewer than 2 points, zero length)."""


class LabelOutOfRange(FormatError):
    pass


class SingularAffine(FormatError):
    pass


# -- geometry / clustering ----------------------------------------------------

class DegenerateLength(ParcellateError):
    pass


class MismatchedPointCount(ParcellateError):
    pass


class AllFibersRemoved(ParcellateError):
    pass


class InsufficientData(ParcellateError):
    pass


class MisalignedAssignment(ParcellateError):
    pass


class LengthMismatch(ParcellateError):
    pass


# -- regression -------------------------------------------------------------

class KTooSmall(ParcellateError):
    pass


class NoConvergence(ParcellateError):
    pass


class AlphaZeroPath(ParcellateError):
    pass


class TooFewSubjects(ParcellateError):
    pass


class SizeMismatch(ParcellateError):
    pass


class NonSquare(ParcellateError):
    pass


class InvalidConfig(ParcellateError, ValueError):
    pass


# -- warnings ---------------------------------------------------------------

class EmptyBundleWarning(UserWarning):
    """Some centroids never received an update during mini-batch fitting."""


class DegenerateResponseWarning(UserWarning):
    """The response has zero variance; an intercept-only model was returned."""
