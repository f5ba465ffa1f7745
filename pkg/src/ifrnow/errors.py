"""Exception hierarchy shared across ifrnow modules."""


class IfrNowError(Exception):
    """Base class for all package errors."""


class DataError(IfrNowError):
    """Input data is unusable; the CLI maps these to exit status 2."""


class MalformedReport(DataError):
    pass


class UnparseableVisibility(DataError):
    pass


class MalformedBulletin(DataError):
    pass


class UnresolvableGroupTime(DataError):
    pass


class MixedStations(DataError):
    pass


class EmptySeries(DataError):
    pass


class TooFewExamples(DataError):
    pass


class SingleClass(DataError):
    pass


class NonFiniteFeature(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class FormatVersionMismatch(DataError):
    pass


class CorruptModel(DataError):
    pass


class EmptyBackground(DataError):
    pass


class EmptyDataset(DataError):
    pass


class LengthMismatch(DataError):
    pass


class UndefinedMetric(DataError):
    """A ratio metric has a zero denominator."""


class NoPositiveTruth(UndefinedMetric):
    pass


class NoPositivePred(UndefinedMetric):
    pass


class NoOverlap(DataError):
    pass


class HorizonMismatch(DataError):
    pass


class UnknownGroup(DataError):
    pass


class ExhaustedRetries(IfrNowError):
    pass


class CacheCorrupt(DataError):
    pass


class FetchFailed(IfrNowError):
    """Non-retryable HTTP response from an archive provider."""
