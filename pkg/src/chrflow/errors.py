"""Exception types shared across the solvers."""

from __future__ import annotations


class DomainError(ValueError):
    """A concentration left the admissible interval of the free energy."""

    def __init__(self, message: str, node: int | None = None, value: float | None = None):
        super().__init__(message)
        self.node = node
        self.value = value


class RateRangeError(OverflowError):
    """Exponent of a Butler-Volmer term is too large to evaluate safely."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to reach its tolerance.

    ``residual`` is the last residual norm and ``history`` whatever per-iteration
    diagnostics the solver kept (residuals, contraction ratios).
    """

    def __init__(self, message: str, residual: float = float("nan"), history=None):
        super().__init__(message)
        self.residual = residual
        self.history = list(history) if history is not None else []


class MonotonicityError(RuntimeError):
    """The boundary Jacobian lost its sign, so the Robin problem is not monotone."""


class ConfigError(ValueError):
    """Invalid run configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        super().__init__(message)
        self.key = key
        self.line = line
