"""Exception hierarchy shared by all modules."""


class DjamError(Exception):
    """Base class for every error raised by this package."""


# network
class IndexOutOfRange(DjamError, IndexError):
    pass


class SelfLoop(DjamError, ValueError):
    pass


class DuplicateEdge(DjamError, ValueError):
    pass


class NonpositiveWeight(DjamError, ValueError):
    pass


class DisconnectedGraph(DjamError, ValueError):
    pass


class UnknownEdge(DjamError, KeyError):
    pass


# losses / numerics
class DimensionMismatch(DjamError, ValueError):
    pass


class NonFiniteInput(DjamError, ValueError):
    pass


class SolverDidNotConverge(DjamError, RuntimeError):
    pass


class MissingNeighborModel(DjamError, KeyError):
    pass


# schedule
class InvalidSchedule(DjamError, ValueError):
    pass


# oracle
class NotQuadratic(DjamError, TypeError):
    pass


class LinearSolveFailure(DjamError, RuntimeError):
    pass


class MaxSweepsExceeded(DjamError, RuntimeError):
    pass


# admm
class NonpositiveRho(DjamError, ValueError):
    pass


# experiment
class InvalidTopology(DjamError, ValueError):
    pass


class FactorizationFailure(DjamError, RuntimeError):
    pass


class ZeroNormSolutionComponent(DjamError, ValueError):
    pass


class ConfigError(DjamError, ValueError):
    pass
