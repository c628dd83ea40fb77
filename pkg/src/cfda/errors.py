"""Exception hierarchy.

Every error raised by the library derives from :class:`CfdaError`. The three
intermediate classes map onto the CLI exit codes: configuration problems (2),
data problems (3) and numerical failures (4).
"""


class CfdaError(Exception):
    exit_code = 1


class ConfigError(CfdaError):
    exit_code = 2


class DataError(CfdaError, ValueError):
    exit_code = 3


class NumericError(CfdaError, ArithmeticError):
    exit_code = 4


# compositions
class AllZeroColumn(DataError):
    pass


class NegativeEntry(DataError):
    pass


class NonPositiveEntry(DataError):
    pass


class NotZeroSum(DataError):
    pass


class GridMismatch(DataError):
    pass


class ClrOverflow(NumericError, OverflowError):
    pass


# smoothing / imputation
class SingularFit(NumericError):
    pass


class InsufficientCompleteCurves(DataError):
    pass


class GuardViolation(DataError):
    pass


# cfpca
class EmptySample(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class NonPSD(NumericError):
    pass


class ConvergenceFailure(NumericError):
    pass


# clustering
class DegenerateEmbedding(NumericError):
    pass


class EmptyCluster(NumericError):
    pass


class SingleCluster(DataError):
    pass


# ingest
class HeaderMismatch(DataError):
    pass


class UnknownRevision(DataError):
    pass


class AmbiguousCode(DataError):
    pass


class MissingYearBeyondGuard(DataError):
    pass


class PartialAgeCoverage(UserWarning):
    """Emitted when a source age band straddles the analysis window."""


# cli
class MissingUpstreamArtifact(DataError):
    def __init__(self, path, message=None):
        self.path = str(path)
        super().__init__(message or f"missing or empty upstream artifact: {self.path}")
