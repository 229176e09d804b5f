"""Exception types shared across the package.

The CLI maps these onto exit codes: :class:`InputError` and :class:`FormatError`
subclasses are data errors (exit 2), :class:`NumericError` is a numeric
failure (exit 3).
"""


class EEVError(Exception):
    """Base class for every error raised by eevnet."""


class InputError(EEVError, ValueError):
    """A caller-supplied value violates a precondition."""


class DimensionError(InputError):
    """Operand shapes are incompatible."""


class AlignmentError(DimensionError):
    """Two modalities (or tracks) do not share a time axis."""


class DegenerateVarianceError(InputError):
    """A correlation was requested for a series with zero variance."""


class NumericError(EEVError, ArithmeticError):
    """A computation produced NaN/Inf or otherwise lost numeric meaning."""


class FormatError(EEVError):
    """A file does not follow its declared on-disk layout."""


class MagicError(FormatError):
    """Leading magic bytes do not match the expected format."""


class VersionError(FormatError):
    """The file declares a format version this build cannot read."""


class TruncationError(FormatError):
    """The file ends before the layout says it should."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class IntegrityError(FormatError):
    """Self-consistency checks between header and payload failed."""


class RangeError(FormatError):
    """A stored value lies outside its permitted range."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class ParseError(FormatError):
    """A text cell could not be parsed as the expected type."""
