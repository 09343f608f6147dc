"""Exception hierarchy shared by all warpmin modules."""


class WarpminError(Exception):
    """Base class for every error raised by this package."""


class DomainError(WarpminError, ValueError):
    pass


class DegenerateMetric(WarpminError):
    pass


class UnknownModel(WarpminError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown model"


class InvalidParams(WarpminError, ValueError):
    pass


class LeftDomain(WarpminError):
    """A path or flow left the chart; ``last_point`` is the last valid state."""

    def __init__(self, message, last_point=None):
        super().__init__(message)
        self.last_point = last_point


class NoConvergence(WarpminError):
    pass


class RadiusTooLarge(WarpminError):
    pass


class DegenerateElement(WarpminError):
    pass


class FrameFailure(WarpminError):
    pass


class StructureMismatch(WarpminError, ValueError):
    pass


class SingularJacobian(WarpminError):
    pass


class DomainEscape(WarpminError):
    pass


class CollapseDetected(WarpminError):
    pass


class SeedOutsideBall(WarpminError, ValueError):
    pass


class ConfigError(WarpminError, ValueError):
    """Bad scenario configuration. ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
