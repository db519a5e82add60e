"""Exception types shared across the package."""


class CatGnnError(Exception):
    pass


class InvalidInput(CatGnnError, ValueError):
    pass


class DuplicateId(InvalidInput):
    pass


class SchemaError(CatGnnError, KeyError):
    def __init__(self, column):
        super().__init__(column)
        self.column = column

    def __str__(self):
        return f"missing column: {self.column}"


class ParseError(CatGnnError, ValueError):
    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class ShapeError(CatGnnError, ValueError):
    pass


class SegmentError(CatGnnError, ValueError):
    pass


class NumericsError(CatGnnError, ArithmeticError):
    pass


class ContractError(CatGnnError, ValueError):
    pass


class EmptyNeighborhood(CatGnnError, ValueError):
    pass


class NoCausalNodes(CatGnnError, ValueError):
    pass


class InvalidSplit(CatGnnError, ValueError):
    pass


class UndefinedMetric(CatGnnError, ValueError):
    pass
