"""Exception types shared across the package."""


class InvariantError(RuntimeError):
    """An internal consistency check failed.

    Raised when a quantity the library itself computed violates a property
    it is supposed to guarantee (e.g. a solved interpolant does not pass
    through its own targets).  Bad *inputs* raise ValueError/OSError
    instead; seeing InvariantError means a bug, not a user mistake.
    """
