"""Exception hierarchy.

The CLI maps these onto exit codes: ``ConfigError`` -> 2, ``DataError`` -> 3,
``CapacityError`` -> 4.
"""


class EtanaError(Exception):
    pass


class ConfigError(EtanaError, ValueError):
    pass


class DataError(EtanaError, ValueError):
    pass


class CapacityError(EtanaError):
    pass


class ZeroEvidence(DataError):
    """An observation has zero probability under every class with mass."""


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class RaggedRows(ParseError):
    pass


class NonAscendingIndex(ParseError):
    pass


class EmptyDataset(DataError):
    pass


class TooFewInstances(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class EmptyBatch(DataError):
    pass


class GridTooLarge(CapacityError):
    pass


class DivergenceDetected(EtanaError, ArithmeticError):
    pass
