"""Exception types raised across the package."""


class CrossEmbodyError(Exception):
    """Base class for all package errors."""


class ZeroQuaternion(CrossEmbodyError, ValueError):
    pass


class DegenerateSixD(CrossEmbodyError, ValueError):
    pass


class NotARotation(CrossEmbodyError, ValueError):
    pass


class SeedOutOfLimits(CrossEmbodyError, ValueError):
    pass


class NotConverged(CrossEmbodyError):
    """IK did not reach tolerance; ``solution`` holds the best iterate."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class BadLength(CrossEmbodyError, ValueError):
    pass


class EmptyTrajectory(CrossEmbodyError, ValueError):
    pass


class TaskUnreachable(CrossEmbodyError):
    pass


class BadMagic(CrossEmbodyError, IOError):
    pass


class VersionMismatch(CrossEmbodyError, IOError):
    pass


class TruncatedFile(CrossEmbodyError, IOError):
    pass


class UnknownInstruction(CrossEmbodyError, KeyError):
    pass


class NonFiniteLoss(CrossEmbodyError, FloatingPointError):
    pass


class NonFinite(CrossEmbodyError, FloatingPointError):
    pass


class ShapeMismatch(CrossEmbodyError, ValueError):
    pass


class ConfigError(CrossEmbodyError, ValueError):
    pass
