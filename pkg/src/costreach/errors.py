class ReachError(Exception):
    """Base class for all errors raised by costreach."""


class InputError(ReachError, ValueError):
    pass


class FieldFormatError(ReachError):
    pass


class FieldTruncatedError(FieldFormatError):
    pass


class ModelError(ReachError):
    """A model evaluator returned a non-finite value."""


class AssumptionViolation(ReachError, ValueError):
    """Running cost lower bound is not strictly positive."""


class SolverError(ReachError):
    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class BudgetExceeded(ReachError):
    def __init__(self, required, budget):
        super().__init__(f"enumeration needs {required} sequences, budget is {budget}")
        self.required = required
        self.budget = budget


class DigestMismatch(ReachError):
    pass


class ConfigError(ReachError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
