"""Exception types, grouped by how the CLI maps them to exit codes."""


class ContractViolation(ValueError):
    """An argument violates a documented precondition."""


class DegenerateDistribution(ValueError):
    """A distribution carries no probability mass where some is required."""


class InstanceTooLarge(ValueError):
    """Brute-force enumeration refused: K**T exceeds the size guard."""


class SchemaError(ValueError):
    """A data or checkpoint file does not match its documented schema."""


class ConfigError(ValueError):
    """Invalid, unknown, or inconsistent configuration."""


class DivergenceError(RuntimeError):
    """Training produced non-finite losses or gradients."""
