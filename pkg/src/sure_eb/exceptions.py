"""Exception types shared across the package."""


class DataError(ValueError):
    """Input data cannot be used (bad shapes, non-finite values, degenerate spread)."""


class NumericalError(FloatingPointError):
    """A loss or gradient became non-finite during fitting."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot
