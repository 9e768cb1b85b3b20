class DreamsError(Exception):
    """Base class for errors raised by this package."""


class UnsatisfiableWorld(DreamsError):
    """No traversable world was produced within the retry budget."""


class UnreachableGoal(DreamsError):
    """The goal cannot be reached on the true world."""


class NoPlanFound(DreamsError):
    """Every sampled world left the goal unreachable."""


class ConfigError(DreamsError, ValueError):
    """Invalid sweep configuration."""
