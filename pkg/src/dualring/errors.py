"""Exception hierarchy shared by every module.

Each exception carries the CLI exit code it maps to, so the command-line
front end never needs a lookup table of its own.
"""


class DualRingError(Exception):
    exit_code = 2


# -- profiles -------------------------------------------------------------

class EmptyContext(DualRingError):
    pass


class UnmappableCategory(DualRingError):
    pass


class WeightOutOfBounds(DualRingError):
    pass


class StaleDelta(DualRingError):
    pass


# -- differential privacy ---------------------------------------------------

class ThresholdOutOfRange(DualRingError):
    pass


class UnsupportedQuery(DualRingError):
    pass


class NonPositiveEpsilon(DualRingError):
    pass


# -- entropy monitor --------------------------------------------------------

class InvalidDistribution(DualRingError):
    pass


class UnreachableTarget(DualRingError):
    pass


class KTooLarge(DualRingError):
    pass


# -- matcher / classifier ---------------------------------------------------

class NoPositiveMatch(DualRingError):
    pass


class EmptyCatalog(DualRingError):
    pass


class Unmappable(DualRingError):
    pass


class EmptyInput(DualRingError):
    pass


# -- PIR --------------------------------------------------------------------

class EmptyDatabase(DualRingError):
    pass


class IndexOutOfRange(DualRingError):
    pass


class BadDepth(DualRingError):
    pass


class InsufficientResponses(DualRingError):
    exit_code = 5


class InconsistentResponses(DualRingError):
    exit_code = 4


class ProtocolError(DualRingError):
    """Malformed frame or an ERROR frame received from a server."""

    exit_code = 4

    def __init__(self, message, code=0x01):
        super().__init__(message)
        self.code = code


class ShapeMismatch(ProtocolError):
    def __init__(self, message):
        super().__init__(message, code=0x02)


class QuorumUnreachable(DualRingError):
    exit_code = 5


class FormatError(DualRingError):
    """A file on disk does not parse."""

    exit_code = 3
