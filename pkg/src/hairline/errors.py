"""Exception hierarchy.

Every error raised on purpose by the toolkit derives from :class:`HairlineError`.
The CLI maps these to exit code 1 (bad input) and plain ``OSError`` to exit
code 2 (I/O failure).
"""


class HairlineError(Exception):
    """Base class for validation errors raised by hairline."""


# ingest
class ParseError(HairlineError):
    pass


class DuplicateId(HairlineError):
    pass


class MissingField(HairlineError):
    pass


class BadMagic(HairlineError):
    pass


class TruncatedPayload(HairlineError):
    pass


class NonFiniteValue(HairlineError):
    pass


class WrongPointCount(HairlineError):
    pass


class InvalidMask(HairlineError):
    pass


# labeling
class OutOfRangeScore(HairlineError):
    pass


# pair statistics
class ZeroVector(HairlineError):
    pass


class DimensionMismatch(HairlineError):
    pass


class DegenerateDistribution(HairlineError):
    pass


class EmptyDataset(HairlineError):
    pass


# manifest builder
class InsufficientSubjects(HairlineError):
    pass


class InsufficientImages(HairlineError):
    pass


# augmentation
class DegenerateTriangle(HairlineError):
    pass


class OutOfBoundsLandmark(HairlineError):
    pass


class DegeneratePolygon(HairlineError):
    pass


class MissingLandmarks(HairlineError):
    pass


class MissingMask(HairlineError):
    pass


# reporting
class EmptyReport(HairlineError):
    pass


class InvalidSpec(HairlineError, ValueError):
    """Parameters out of their documented bounds."""
