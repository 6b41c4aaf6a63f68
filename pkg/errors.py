class QPMeLError(Exception):
    """Base class for every error raised by this package."""


class InvalidEncodingError(QPMeLError, ValueError):
    pass


class DimensionError(QPMeLError, ValueError):
    pass


class UndefinedSimilarityError(QPMeLError, ValueError):
    pass


class CapacityError(QPMeLError, ValueError):
    pass


class ArgumentError(QPMeLError, ValueError):
    pass


class ConfigurationError(QPMeLError, ValueError):
    pass


class FormatError(QPMeLError, ValueError):
    pass


class TruncatedDataError(FormatError):
    pass


class ConsistencyError(QPMeLError, ValueError):
    pass


class ChecksumError(QPMeLError):
    pass
