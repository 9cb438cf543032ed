"""Exception hierarchy. Validation problems map to CLI exit code 2, runtime failures to 3."""


class ValidationError(ValueError):
    """Inputs violate a documented precondition."""


class ContractError(RuntimeError):
    """An API object was used outside its lifecycle (e.g. a trace consumed twice)."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during optimization."""

    def __init__(self, message, log=None, checkpoint=None):
        super().__init__(message)
        self.log = log or []
        self.checkpoint = checkpoint


class IdxParseError(ValidationError):
    """Malformed IDX container."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ModelFormatError(ValidationError):
    """A saved model file cannot be loaded (version mismatch, tampering)."""


class BudgetExhaustedError(ValidationError):
    """A central privacy target cannot be met by the DP optimizer configuration."""
