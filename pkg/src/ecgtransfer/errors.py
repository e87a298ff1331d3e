"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line front end can map
failures onto process exit statuses without a lookup table.
"""


class EcgError(Exception):
    """Base class for all package errors."""

    exit_code = 1


# -- parsing / storage -------------------------------------------------------


class ParseError(EcgError, ValueError):
    exit_code = 2


class RowCountMismatch(ParseError):
    pass


class ColumnCountMismatch(ParseError):
    pass


class NonNumericToken(ParseError):
    pass


class MalformedHeader(ParseError):
    pass


class UnsupportedFormat(ParseError):
    pass


class LengthMismatch(EcgError, ValueError):
    exit_code = 2


class WrongLeadCount(EcgError, ValueError):
    exit_code = 2


class CorruptStore(EcgError):
    exit_code = 3


class IoFailure(EcgError, OSError):
    exit_code = 3


# -- data / model ------------------------------------------------------------


class EmptySplit(EcgError, ValueError):
    exit_code = 2


class EmptyClassWarning(UserWarning):
    pass


class UnknownModel(EcgError, KeyError):
    exit_code = 2

    def __str__(self):
        return Exception.__str__(self)


class ShapeMismatch(EcgError, ValueError):
    exit_code = 2


class ShapeInferenceError(EcgError, ValueError):
    exit_code = 2


class IncompatibleArchitecture(EcgError, TypeError):
    exit_code = 2


class IndexOutOfRange(EcgError, IndexError):
    exit_code = 2


# -- metrics -----------------------------------------------------------------


class DegenerateClass(EcgError, ValueError):
    """A one-vs-rest problem has no positives or no negatives."""


class AllDegenerate(DegenerateClass):
    pass


# -- training / pipeline -----------------------------------------------------


class DivergedLoss(EcgError, FloatingPointError):
    exit_code = 5


class ConfigInvalid(EcgError, ValueError):
    exit_code = 2


class MissingArtifact(EcgError, FileNotFoundError):
    exit_code = 3


class MissingCheckpoint(MissingArtifact):
    pass


class AlreadyExists(EcgError, FileExistsError):
    exit_code = 4
