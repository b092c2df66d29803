"""Exception hierarchy.

Errors are grouped by the CLI exit code they map to: configuration
problems (2), numerical failures (3) and invariant violations (4).
"""


class QGDiracError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(QGDiracError):
    """Bad input: malformed graph, parameters out of range, wrong regime."""

    exit_code = 2


class NumericsError(QGDiracError):
    """An iterative method failed to deliver a result."""

    exit_code = 3


class InvariantViolation(QGDiracError):
    """A quantity that must hold exactly (up to round-off) did not."""

    exit_code = 4


# graph model
class InvalidGraph(ConfigError):
    pass


class UnknownVertex(InvalidGraph):
    pass


class EmptyCore(ConfigError):
    pass


class NotAHalfLine(ConfigError):
    pass


class NonPositiveLength(InvalidGraph):
    pass


class Disconnected(InvalidGraph):
    pass


class DuplicateId(InvalidGraph):
    pass


# discretisation / spectra
class InvalidParameters(ConfigError):
    pass


class GridTooCoarse(ConfigError):
    pass


class NoncompactGraph(ConfigError):
    pass


class EigenNonConvergence(NumericsError):
    pass


class SearchMeshTooCoarse(NumericsError):
    pass


class NotACycle(ConfigError):
    pass


class NoHalfLine(ConfigError):
    pass


# functionals / solver
class OutOfDomain(ConfigError):
    pass


class LeftUMu(NumericsError):
    """An iterate left the penalisation domain {S < 1}."""


class NonConvergence(NumericsError):
    pass


class CollapseToZero(NonConvergence):
    """Iteration converged to the trivial solution."""


class SingularJacobian(NumericsError):
    pass


class NoMinimaxPath(NumericsError):
    pass


class WrongRegime(ConfigError):
    pass


class SampleFailure(NumericsError):
    pass


class MissingConstant(ConfigError):
    pass


class HypothesisUnmet(ConfigError):
    pass


class StageFailure(NumericsError):
    def __init__(self, msg, last_report=None):
        super().__init__(msg)
        self.last_report = last_report
