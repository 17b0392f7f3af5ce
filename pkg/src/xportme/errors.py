"""Exception hierarchy shared by every module."""


class XportmeError(Exception):
    """Base class for all errors raised by xportme."""


class DatasetError(XportmeError):
    pass


class MissingColumn(DatasetError):
    pass


class BadLabel(DatasetError):
    pass


class NonNumeric(DatasetError):
    pass


class ValidationRowTreated(DatasetError):
    pass


class EmptyArm(XportmeError):
    pass


class MissingTruth(XportmeError):
    pass


class DegenerateWeights(XportmeError):
    pass


class DimensionMismatch(XportmeError):
    pass


class ProbabilityOutOfRange(XportmeError):
    pass


class ZeroSpread(XportmeError):
    pass


class FitError(XportmeError):
    """Raised when the membership model cannot be fitted."""


class SeparationDetected(FitError):
    pass


class RankDeficient(FitError):
    pass


class NotConverged(FitError):
    pass


class InsufficientStratum(XportmeError):
    pass


class ConfigError(XportmeError):
    pass
