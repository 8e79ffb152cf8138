"""Exception types shared across modules."""

from __future__ import annotations


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message: str, residual: float, iterations: int) -> None:
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = float(residual)
        self.iterations = int(iterations)


class FactorizationError(RuntimeError):
    """A matrix that should be positive definite failed to factor."""
