"""Package-wide exception types."""


class ConfigError(ValueError):
    """A configuration value violates a documented contract."""


class NumericError(RuntimeError):
    """A computation produced NaN/Inf where finite values are required."""
