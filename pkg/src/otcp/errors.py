"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so raise the most specific
type available: `DataError` for anything wrong with user-supplied inputs
(files, shapes, signs, duplicate coordinates) and `DivergenceError` for
numerical blow-ups detected while iterating.
"""


class DataError(ValueError):
    """Invalid input data: malformed files, bad shapes, sign violations."""


class DivergenceError(RuntimeError):
    """A numerical iteration produced non-finite values."""
