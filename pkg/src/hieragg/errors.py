"""Exception types raised across the package."""


class HierAggError(Exception):
    """Base class for all package errors."""


# hierarchy
class HierarchyError(HierAggError):
    pass


class CycleDetected(HierarchyError):
    pass


class MultipleRoots(HierarchyError):
    pass


class OrphanNode(HierarchyError):
    pass


class InconsistentLevel(HierarchyError):
    pass


class SingularNormalMatrix(HierarchyError):
    pass


# data ingestion
class DataError(HierAggError):
    """Input data problem; ``row`` is the 1-based CSV line number when known."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class UnknownNode(DataError):
    pass


class NegativeValue(DataError):
    pass


class NonContiguousWeeks(DataError):
    pass


class ParseError(DataError):
    pass


class SpanTooLarge(HierAggError):
    pass


class SpecTooSmall(HierAggError):
    pass


class SeriesTooShort(HierAggError):
    pass


# metrics
class EmptyWindow(HierAggError):
    pass


class ZeroDenominatorWeek(HierAggError):
    def __init__(self, week):
        self.week = week
        super().__init__(f"node subset has zero total truth in target week {week}")


class NoAvailableExpert(HierAggError):
    pass


class MissingRunOutput(HierAggError):
    pass


class ConfigError(HierAggError):
    pass
