"""Exception types shared across the package."""


class HeposError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(HeposError, ValueError):
    pass


class ParameterError(HeposError, ValueError):
    pass


class EmptyRowError(HeposError, ValueError):
    """A query row has no attended key."""

    def __init__(self, rows):
        self.rows = list(rows)
        shown = self.rows[:8]
        more = "" if len(self.rows) <= 8 else f" (+{len(self.rows) - 8} more)"
        super().__init__(f"attention rows with no attended key: {shown}{more}")


class NumericError(HeposError, ArithmeticError):
    pass


class ContractError(HeposError, RuntimeError):
    pass


class CapacityError(HeposError, ValueError):
    pass


class TrainingError(HeposError, RuntimeError):
    def __init__(self, step: int, message: str):
        self.step = step
        super().__init__(f"step {step}: {message}")
