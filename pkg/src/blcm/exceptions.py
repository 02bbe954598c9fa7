"""Exception hierarchy shared by all blcm modules."""


class BlcmError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(BlcmError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class PreconditionError(BlcmError, ValueError):
    pass


class ParamError(BlcmError, ValueError):
    pass


class StructureError(BlcmError):
    """Population tables do not have the structure the recovery assumes."""


class SubsetViolation(StructureError):
    pass


class MonotoneViolation(StructureError):
    pass


class SearchError(BlcmError):
    """No double-triangular witness exists for the given graph."""


class UnsupportedItemKind(BlcmError, TypeError):
    pass


class ParseError(BlcmError, ValueError):
    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class SchemaError(BlcmError, ValueError):
    pass


class DegenerateInput(BlcmError, ValueError):
    pass


class DegenerateInputWarning(UserWarning):
    """An input column carries no information and was pinned."""
