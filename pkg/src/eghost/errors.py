"""Exception hierarchy for the ghost-imaging toolkit."""


class GhostError(Exception):
    """Base class for all toolkit errors."""


class ConfigInvalid(GhostError):
    """A configuration value is missing, out of range or inconsistent."""


class DataError(GhostError):
    """Input data violates a contract (ordering, ranges, file layout)."""


class StreamError(DataError):
    def __init__(self, index: int, message: str = ""):
        self.index = int(index)
        super().__init__(message or f"{type(self).__name__} at index {self.index}")


class OutOfOrder(StreamError):
    pass


class NegativeTime(StreamError):
    pass


class BeyondDuration(StreamError):
    pass


class OutsideFieldOfView(StreamError):
    pass


# optics
class OpticsError(DataError):
    pass


class NoIntersection(OpticsError):
    pass


class HoleClipped(OpticsError):
    pass


class OutsideNA(OpticsError):
    pass


class OpticsOutOfRange(OpticsError):
    pass


class NoConvergence(GhostError):
    def __init__(self, best_residual: float, message: str = ""):
        self.best_residual = float(best_residual)
        super().__init__(message or f"no convergence, best residual {self.best_residual:g}")


# coincidence
class InvalidRange(DataError):
    pass


class DegenerateTotals(DataError):
    pass


class NoSignificantPeak(DataError):
    pass


class InsufficientSideband(DataError):
    pass


# reconstruction
class IndexOutOfRange(DataError):
    pass


class BinningMismatch(DataError):
    pass


# file formats
class BadMagic(DataError):
    pass


class VersionUnsupported(DataError):
    pass


class TruncatedRecord(DataError):
    pass


class CountMismatch(DataError):
    pass
