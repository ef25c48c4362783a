"""Exception types shared across the package."""


class InvalidInput(ValueError):
    """Bad values or shapes passed to an operation (CLI exit code 2)."""


class DataContractError(ValueError):
    """A file or dataset violates its documented contract (CLI exit code 3)."""


class TrainingError(RuntimeError):
    """Optimization produced a non-finite loss or gradients."""
