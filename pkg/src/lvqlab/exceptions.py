"""Exception hierarchy for lvqlab.

Every error raised by the library derives from :class:`LVQError`, which is a
``ValueError`` so callers that only care about bad input can catch that.
"""


class LVQError(ValueError):
    """Base class for all lvqlab errors."""


class SingularBasis(LVQError):
    pass


class NonFinite(LVQError):
    pass


class DimensionMismatch(LVQError):
    pass


class SearchTooLarge(LVQError):
    pass


class AlphabetOverflow(LVQError):
    pass


class CorruptStream(LVQError):
    pass


class EmptyInput(LVQError):
    pass


class IndexOutOfRange(LVQError, IndexError):
    pass


class BadSpec(LVQError):
    pass


class TooFewPoints(LVQError):
    pass


class InsufficientOverlap(LVQError):
    pass


class RoundTripMismatch(LVQError):
    """Decoder-side reconstruction differs from the encoder-side one."""


class FormatError(LVQError):
    """A file does not carry the expected magic, version or layout."""
