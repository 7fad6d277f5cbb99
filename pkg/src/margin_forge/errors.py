"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's precondition."""


class ConfigurationError(ValueError):
    """Raised for inconsistent or incomplete settings."""


class ParseError(ValueError):
    """Raised when an input file cannot be decoded."""


class TrainingDivergedError(RuntimeError):
    """Raised when a loss or gradient becomes non-finite during training."""
