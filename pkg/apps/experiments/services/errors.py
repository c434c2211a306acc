"""Exception hierarchy shared by the numerical engine.

``CifInputError`` covers bad inputs and configuration (CLI exit code 2),
``NumericalError`` covers failures of the numerics themselves (exit code 3).
"""


class CifError(RuntimeError):
    pass


class CifInputError(CifError):
    pass


class NumericalError(CifError):
    pass


class ConfigError(CifInputError):
    pass


class InvalidTable(CifInputError):
    pass


class DimensionMismatch(CifInputError):
    pass


class BadSplit(CifInputError):
    pass


class SizeCap(CifInputError):
    pass


class NegativeInput(CifInputError):
    pass


class InsufficientSamples(CifInputError):
    pass


class ParseError(CifInputError):
    def __init__(self, message: str, row: int, col: int) -> None:
        super().__init__(f"{message} (row {row}, column {col})")
        self.row = row
        self.col = col


class NonPositiveProbability(NumericalError):
    pass


class InvalidMoments(NumericalError):
    pass


class InfeasibleMoments(NumericalError):
    pass


class NumericOverflow(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class SingularBlock(NumericalError):
    pass
