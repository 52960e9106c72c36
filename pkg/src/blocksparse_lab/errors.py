"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand dimensions do not line up."""


class ContractError(ValueError):
    """An input violates a documented precondition (e.g. a row that is not stochastic)."""


class ConfigError(ValueError):
    """A run configuration failed validation."""
