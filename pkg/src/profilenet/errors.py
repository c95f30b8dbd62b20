"""Exception hierarchy shared by all analysis modules."""


class ProfileNetError(Exception):
    """Base class for every error raised by the toolkit."""


class DataError(ProfileNetError):
    """Problems with the input data (maps to CLI exit code 3)."""


class NumericalError(ProfileNetError):
    """A numerical routine could not produce a valid result (exit code 4)."""


class ConfigError(ProfileNetError):
    """Invalid pipeline configuration (exit code 2)."""


class NotPositiveDefinite(NumericalError):
    pass


class ZeroVariance(DataError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"column {column!r} has zero variance")


class NonFiniteInput(DataError):
    pass


class TooFewRows(DataError):
    pass


class UnreadableFile(DataError):
    pass


class HeaderMismatch(DataError):
    pass


class EmptyAfterDeletion(DataError):
    pass


class SingleLevel(DataError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"column {column!r} has fewer than 2 distinct levels")


class LengthMismatch(DataError):
    pass


class AllStartsFailed(NumericalError):
    pass


class NoConvergedModels(NumericalError):
    pass


class DegenerateGroup(DataError):
    pass


class InvalidCounts(DataError):
    pass


class RankDeficient(NumericalError):
    def __init__(self, message, subset=None):
        self.subset = subset
        super().__init__(message)


class TooManyGroups(DataError):
    pass


class NoConvergence(NumericalError):
    pass


class NodeMismatch(DataError):
    pass
