"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A config value or combination of values is invalid."""


class DimensionError(ValueError):
    """Tensor shapes violate an operation's contract."""


class ContractViolation(ValueError):
    """A runtime value falls outside an operation's domain."""


class TrainingDiverged(RuntimeError):
    """The training loss stopped being finite."""
