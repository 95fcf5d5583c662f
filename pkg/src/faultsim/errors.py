"""Exception types shared across the package.

The CLI maps these to process exit codes: ConfigError -> 2,
NumericalFailure (and subclasses) -> 3, UnrecoverableRankError -> 4.
"""


class ConfigError(ValueError):
    """Invalid or unknown configuration input."""


class ContractViolation(ValueError):
    """An operation was called outside its stated preconditions."""


class NumericalFailure(RuntimeError):
    """Non-finite values or a diverged computation."""


class SvdConvergenceError(NumericalFailure):
    """Subspace iteration did not reach the requested tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class UnrecoverableRankError(RuntimeError):
    """A DP rank has more failed stages than eligible adopters."""


class ConsistencyError(RuntimeError):
    """An internal invariant was broken (a bug, not a user error)."""
