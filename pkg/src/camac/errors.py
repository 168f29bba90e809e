"""Exception types shared across the package."""


class CamacError(Exception):
    """Base class for all package errors."""


class ShapeError(CamacError, ValueError):
    """Operand dimensions do not conform."""


class LayerStateError(CamacError, RuntimeError):
    """A layer was used out of order, e.g. backward before forward."""


class EvaluationError(CamacError, ArithmeticError):
    """A function produced a non-finite value where a finite one is required."""


class ConfigError(CamacError, ValueError):
    """Invalid configuration. ``issues`` lists every violation found."""

    def __init__(self, issues):
        if isinstance(issues, str):
            issues = [issues]
        self.issues = list(issues)
        super().__init__("; ".join(self.issues))


class ActionError(CamacError, ValueError):
    """A joint action does not fit the current world."""


class InvariantError(CamacError, ValueError):
    """A documented invariant (e.g. weights summing to one) is violated."""


class ReplayBufferError(CamacError, RuntimeError):
    """Replay buffer cannot satisfy the request."""


class TransactionFormatError(CamacError, ValueError):
    """Transaction log has too many malformed rows."""
