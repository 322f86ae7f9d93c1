"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""


class ContractError(ValueError):
    """A documented precondition of an operation was violated."""


class FormatError(ValueError):
    """An input file does not follow its documented format.

    ``line`` is 1-based when known; ``offset`` is a 0-based character offset
    for single-line inputs such as bracketed trees.
    """

    def __init__(self, message, *, source=None, line=None, offset=None):
        self.message = message
        self.source = source
        self.line = line
        self.offset = offset
        where = []
        if source is not None:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class NonFiniteError(FloatingPointError):
    """A gradient or loss became NaN/Inf; ``name`` identifies the culprit."""

    def __init__(self, message, name=None):
        self.name = name
        super().__init__(message)
