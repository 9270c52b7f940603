"""Exception hierarchy.

Three families map onto the CLI exit codes: DataError (2), ShapeError (2)
and NumericalError (3). Usage/config problems raise ConfigError (1).
"""


class AFDError(Exception):
    """Base class for all package errors."""


class ConfigError(AFDError):
    pass


class DataError(AFDError):
    pass


class ShapeError(AFDError):
    pass


class NumericalError(AFDError):
    pass


class MalformedLine(DataError):
    def __init__(self, line_no: int, reason: str = ""):
        self.line_no = line_no
        msg = f"malformed line {line_no}"
        super().__init__(f"{msg}: {reason}" if reason else msg)


class EmptyFile(DataError):
    pass


class EmptyAfterFilter(DataError):
    pass


class InvalidRatios(DataError):
    pass


class NoNegativeAvailable(DataError):
    def __init__(self, user: int):
        self.user = user
        super().__init__(f"user {user} interacted with every item")


class EmptyRelevant(DataError):
    pass


class DimensionMismatch(ShapeError):
    pass


class ShapeMismatch(ShapeError):
    pass


class NotSquare(ShapeError):
    pass


class IndexOutOfRange(ShapeError):
    pass


class TooFewRows(ShapeError):
    pass


class KTooLarge(ShapeError):
    pass


class UnsupportedCombination(ConfigError):
    pass


class NonFiniteGradient(NumericalError):
    pass


class Diverged(NumericalError):
    pass


class ZeroNormRow(NumericalError):
    def __init__(self, row: int):
        self.row = row
        super().__init__(f"row {row} has zero norm")


class NotStandardized(NumericalError):
    pass


class DidNotConverge(NumericalError):
    def __init__(self, residual: float, result=None):
        self.residual = residual
        self.result = result
        super().__init__(f"did not converge, residual={residual:.3e}")
