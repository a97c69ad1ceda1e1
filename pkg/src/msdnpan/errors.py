"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, malformed data
or shape mismatches exit 2, numeric failures exit 3.
"""


class ShapeError(ValueError):
    """An array has the wrong rank, extent, or channel count."""


class FormatError(ValueError):
    """A file or byte stream does not match the expected layout."""


class DegenerateInputError(ValueError):
    """Input is constant, empty, or otherwise outside a metric's domain."""


class NumericError(ArithmeticError):
    """A computation produced NaN/inf or otherwise left the valid range."""
