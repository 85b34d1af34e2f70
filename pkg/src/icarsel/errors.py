"""Exception hierarchy.

Input problems derive from :class:`InputError` (CLI exit code 2), numerical
failures from :class:`NumericalError` (CLI exit code 3).
"""

from __future__ import annotations


class InputError(ValueError):
    """Malformed or inconsistent user input."""


class ParseError(InputError):
    def __init__(self, message: str, path=None, line: int | None = None, column: int | None = None):
        self.path = path
        self.line = line
        self.column = column
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if column is not None:
            loc.append(f"column {column}")
        prefix = ":".join(loc)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class GraphError(InputError):
    """Invalid neighborhood graph (asymmetry, self-loop, negative weight, ...)."""


class DisconnectedGraphError(GraphError):
    pass


class DesignError(InputError):
    """Rank-deficient or undersized design matrix."""


class NumericalError(ArithmeticError):
    """A computation failed or produced an out-of-domain value."""


class DegeneratePriorError(NumericalError):
    """The reference prior for tau vanishes identically for this model."""


class QuadratureError(NumericalError):
    pass
