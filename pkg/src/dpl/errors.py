"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures to a
category without inspecting messages.
"""


class DPLError(Exception):
    exit_code = 1


class ConfigInvalid(DPLError, ValueError):
    exit_code = 2


class DataUnavailable(DPLError):
    exit_code = 3


class FormatError(DPLError, ValueError):
    exit_code = 4


class BadMagic(FormatError):
    pass


class VersionMismatch(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class InconsistentHeader(FormatError):
    pass


class NumericalError(DPLError, ArithmeticError):
    exit_code = 5


class NormTooSmall(NumericalError):
    pass


class NonFiniteGradient(NumericalError):
    pass


class InvalidInput(DPLError, ValueError):
    exit_code = 6


class InvalidShape(InvalidInput):
    pass


class KeyOutOfRange(InvalidInput, IndexError):
    pass


class PatternMismatch(InvalidInput):
    pass


class NoModalityPresent(InvalidInput):
    pass


class InvalidDistribution(InvalidInput):
    pass


class InvalidThreshold(InvalidInput):
    pass


class InvalidStep(InvalidInput):
    pass


class EmptyBatch(InvalidInput):
    pass


class LabelOutOfRange(InvalidInput):
    pass


class NotComplete(InvalidInput):
    pass


class InvalidSpec(InvalidInput):
    pass


class ShapeMismatch(InvalidInput):
    pass


class DegenerateLabels(InvalidInput):
    pass


class IoFailure(DPLError, OSError):
    exit_code = 7
