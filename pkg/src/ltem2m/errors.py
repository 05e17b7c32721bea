class ConfigError(ValueError):
    """Invalid or unsupported simulation configuration."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of a model function."""


class CapacityError(ValueError):
    """Problem instance too large for exhaustive search."""


class ContractViolation(RuntimeError):
    """Caller broke a documented precondition (e.g. wrong slot role)."""
