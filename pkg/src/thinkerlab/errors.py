"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration value."""


class DataError(ValueError):
    """A dataset cannot support the requested operation."""


class StateError(RuntimeError):
    """Operation invoked in an invalid state (e.g. stepping a finished episode)."""


class IntegrityError(RuntimeError):
    """A persisted artifact failed an integrity check."""
