"""Exception types shared across the package."""


class TransferKineticsError(Exception):
    """Base class for all package errors."""


class InvalidInputError(TransferKineticsError, ValueError):
    """Raised when runtime data violates an operation's preconditions
    (non-finite atoms, negative weights where positivity is required,
    mismatched grids, mass mismatch, ...)."""


class InvalidConfigError(TransferKineticsError, ValueError):
    """Raised when a parameter is outside its allowed range
    (transfer fraction not in (0, 1), non-positive time step, ...)."""


class ResourceLimitError(TransferKineticsError, RuntimeError):
    """Raised when an operation would allocate past a configured limit,
    e.g. the pairwise product of two large atomic measures."""


class EvaluationError(TransferKineticsError, ValueError):
    """Raised when a user-supplied function returns a non-finite or
    otherwise unusable value."""


class ConfigFileError(InvalidConfigError):
    """Config file failed validation.  ``errors`` holds (field_path, message)
    pairs, one per problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"{path}: {msg}" for path, msg in self.errors)
        super().__init__(f"invalid configuration: {lines}")
