"""Exception types shared across the package."""


class UsageError(ValueError):
    """Raised when an operation is called with inputs outside its contract."""


class PreconditionError(UsageError):
    """Raised when a lemma-level hypothesis required by a check does not hold."""


class ConstantLedgerViolation(RuntimeError):
    """Raised when a computed object contradicts the frozen constant ledger."""


class ConstructionError(RuntimeError):
    """Raised when a Schottky construction cannot be verified."""

    def __init__(self, message, counterexamples=None):
        super().__init__(message)
        self.counterexamples = list(counterexamples or [])
