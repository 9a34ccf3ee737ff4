class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""
