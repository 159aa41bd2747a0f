class AbsfError(Exception):
    """Base class for every error raised by the ABS lab."""


class DomainError(AbsfError, ValueError):
    """Input outside the domain of an operation."""


class ResourceError(AbsfError):
    """Enumeration would not fit in memory or time."""


class InfeasibleError(AbsfError):
    """Proportional-fair objective is unbounded below for some groups."""

    def __init__(self, message, group_ids=()):
        super().__init__(message)
        self.group_ids = tuple(group_ids)


class ConfigError(AbsfError):
    """Scenario file could not be read or validated."""
