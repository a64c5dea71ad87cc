"""Exception hierarchy shared by all bcpredict modules."""


class BCPredictError(Exception):
    """Base class for every error raised by this package."""


# numerics
class DimensionMismatch(BCPredictError, ValueError):
    pass


class FilterTooWide(BCPredictError, ValueError):
    pass


class EmptyMap(BCPredictError, ValueError):
    pass


class IndexOutOfRange(BCPredictError, IndexError):
    pass


class NonScalarLoss(BCPredictError, ValueError):
    pass


# features
class UnsupportedSampleRate(BCPredictError, ValueError):
    pass


class AudioTooShort(BCPredictError, ValueError):
    pass


class InsufficientContext(BCPredictError, ValueError):
    pass


class CacheError(BCPredictError, IOError):
    pass


class BadMagic(CacheError):
    pass


class VersionMismatch(CacheError):
    pass


class TruncatedFile(CacheError):
    pass


# corpus
class EmptyPool(BCPredictError, ValueError):
    pass


class SizeMismatch(BCPredictError, ValueError):
    pass


class InvalidConfig(BCPredictError, ValueError):
    pass


# model
class UnknownInterlocutor(BCPredictError, KeyError):
    pass


class MissingInput(BCPredictError, ValueError):
    pass


class CheckpointError(BCPredictError, IOError):
    pass


# training / analysis
class EmptySplit(BCPredictError, ValueError):
    pass


class DivergedLoss(BCPredictError, FloatingPointError):
    pass


class VariantWithoutListener(BCPredictError, ValueError):
    pass


class DegenerateData(BCPredictError, ValueError):
    pass


class OutOfRangeScore(BCPredictError, ValueError):
    pass


class IoFailure(BCPredictError, IOError):
    pass


# cli
class ConfigError(BCPredictError, ValueError):
    pass
