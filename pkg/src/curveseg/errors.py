"""Exception types shared across the package."""


class CurvesegError(Exception):
    """Base class for all package errors."""


class FormatError(CurvesegError):
    """A file does not follow its declared binary or text format."""


class TruncatedError(CurvesegError):
    """A file ended before its declared payload was complete."""


class DimError(CurvesegError):
    """Two rasters that must share dimensions do not."""


class ParamError(CurvesegError):
    """A parameter value violates an operation's precondition."""


class ShapeError(CurvesegError):
    """Tensor or weight shapes are incompatible."""


class EmptySkeletonError(CurvesegError):
    """An operation that needs at least one skeleton pixel got none."""


class EmptyPatternError(CurvesegError):
    """Matching was asked to score an empty point pattern."""


class LabelError(CurvesegError):
    """A ranking is missing the ground-truth label it is scored against."""


class ConfigError(CurvesegError):
    """Command-line or config-file values are unusable."""
