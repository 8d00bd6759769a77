"""Exception hierarchy shared by every stage."""


class HmaxError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(HmaxError, ValueError):
    pass


class InvalidInputError(HmaxError, ValueError):
    pass


class FormatError(HmaxError, ValueError):
    """A file did not match its binary or text layout."""


class UnsupportedDepthError(FormatError):
    pass


class TruncatedFileError(FormatError, IOError):
    """A file ended before its declared payload; both a format and an IO error."""


class ImprintExhaustionError(HmaxError):
    def __init__(self, size_index: int):
        super().__init__(f"no admissible C1 location for patch size index {size_index} "
                         f"(side {4 * size_index})")
        self.size_index = size_index


class DegenerateTrainingError(HmaxError, ValueError):
    pass


class UndefinedMetricError(HmaxError, ValueError):
    pass


class UsageError(HmaxError):
    pass
