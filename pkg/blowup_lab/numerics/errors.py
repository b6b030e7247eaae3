from __future__ import annotations


class NumericalError(Exception):
    """Base class of failures that map to the numerical-failure exit code."""


class SolverError(NumericalError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
