"""Exception hierarchy shared across the package."""


class EvoforgeError(Exception):
    """Base class for every error raised by evoforge."""


# action DSL
class ActionParseError(EvoforgeError, ValueError):
    pass


class UnknownActionName(ActionParseError):
    pass


class MalformedPayload(ActionParseError):
    pass


class OutOfRangeCoordinate(ActionParseError):
    pass


# reward verifiers
class ZeroGeometry(EvoforgeError, ValueError):
    pass


class DegenerateBoxes(EvoforgeError, ValueError):
    pass


# judging
class BackendUnavailable(EvoforgeError):
    pass


class MalformedModelOutput(EvoforgeError, ValueError):
    pass


class InconsistentJudgment(EvoforgeError, ValueError):
    pass


class IndexOutOfRange(EvoforgeError, IndexError):
    pass


# optimisation
class GroupTooSmall(EvoforgeError, ValueError):
    pass


class LengthMismatch(EvoforgeError, ValueError):
    pass


class EmptyBatch(EvoforgeError, ValueError):
    pass


# curriculum
class EmptyCaptions(EvoforgeError, ValueError):
    pass


class InconsistentFeedback(EvoforgeError, ValueError):
    pass


# simulated environment
class SchemaError(EvoforgeError, ValueError):
    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


class DanglingReference(SchemaError):
    pass


class EpisodeExhausted(EvoforgeError):
    pass


class GoalUnreachable(EvoforgeError):
    pass


# orchestration
class ConfigError(EvoforgeError, ValueError):
    pass


class EnvLoadError(EvoforgeError):
    pass


class NoSuccessfulTrajectories(EvoforgeError):
    pass


# metrics
class EmptyInput(EvoforgeError, ValueError):
    pass


class NoPositives(EvoforgeError, ValueError):
    pass
