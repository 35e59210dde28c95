"""
Exceptions for odelearn

All failures raised by the library derive from OdeLearnError so that callers
(the CLI in particular) can map them onto exit codes.
"""

from typing import Optional, Sequence


class OdeLearnError(Exception):
    """Base class for odelearn errors."""
    pass


class ContractViolation(OdeLearnError, ValueError):
    """Raised when an operation is called outside its preconditions."""
    pass


class IntegrationError(OdeLearnError):
    """Raised when time integration produces a non-finite state."""

    def __init__(self, message: str, t: float, y: Optional[Sequence[float]] = None):
        super().__init__(f"{message} (t={t!r}, y={list(y) if y is not None else None})")
        self.t = t
        self.y = y


class RolloutError(OdeLearnError):
    """Raised when the implicit multistep solve fails to converge."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step={step})")
        self.step = step


class TrainingDivergence(OdeLearnError):
    """Raised when a training loss becomes non-finite."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration={iteration})")
        self.iteration = iteration


class CheckpointError(OdeLearnError):
    """Raised for unreadable or malformed checkpoints and manifests."""
    pass
