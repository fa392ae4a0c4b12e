"""Exception types shared across the package."""


class SupportMismatchError(ValueError):
    """Two distributions (or a distribution and a score vector) differ in size."""


class ZeroProbabilityError(ValueError):
    """A probability that the requested operation needs to be positive is zero.

    ``index`` identifies the offending entry.
    """

    def __init__(self, message: str, index: int):
        super().__init__(f"{message} (index {index})")
        self.index = index


class NonFiniteError(ValueError):
    """An input or intermediate value is NaN or infinite."""


class NumericalDivergenceError(RuntimeError):
    """Training produced NaN/Inf; carries the epoch (and optionally batch)."""

    def __init__(self, message: str, epoch: int, batch: int | None = None):
        where = f"epoch {epoch}" if batch is None else f"epoch {epoch}, batch {batch}"
        super().__init__(f"{message} at {where}")
        self.epoch = epoch
        self.batch = batch


class ConvergenceError(RuntimeError):
    """An iterative solver exhausted its budget; carries the final residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class ConfigError(ValueError):
    """An experiment config failed schema validation."""
