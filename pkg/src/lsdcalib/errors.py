"""Exception types shared across the package."""


class SingularityError(ArithmeticError):
    """Raised when a logarithm is requested at a rotation angle too close to pi."""


class ContractError(RuntimeError):
    """An input violated a documented contract (mismatched context, missing steps)."""


class ConfigError(ValueError):
    """Invalid or inconsistent benchmark configuration."""
