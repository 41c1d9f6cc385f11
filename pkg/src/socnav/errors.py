"""Exception hierarchy shared across the toolkit."""


class SocNavError(Exception):
    """Base class for all toolkit errors."""


class ParseError(SocNavError):
    pass


class ValidationError(SocNavError):
    pass


class NodeOffRoad(ValidationError):
    pass


class EdgeBlocked(ValidationError):
    pass


class NoPath(SocNavError):
    pass


class DegenerateQuery(NoPath):
    """Start and goal coincide; downstream metrics would divide by zero."""


class NoFeasiblePair(SocNavError):
    pass


class NoValidRecovery(SocNavError):
    pass


class ShapeMismatch(SocNavError):
    pass


class NonFiniteLoss(SocNavError):
    pass


class NonFiniteState(SocNavError):
    pass


class NonFiniteRatio(SocNavError):
    pass


class DivergedTraining(SocNavError):
    pass


class TooShort(SocNavError):
    pass


class ZeroVector(SocNavError):
    pass


class DegenerateEpisode(SocNavError):
    pass


class ConfigError(SocNavError):
    pass


class InfeasibleScene(SocNavError):
    pass


class MissingCheckpoint(SocNavError):
    pass


class VersionMismatch(SocNavError):
    pass
