"""Exception hierarchy shared across the package."""


class OMNetError(Exception):
    """Base class for domain errors; the CLI maps these to exit code 1."""


class ShapeError(OMNetError, ValueError):
    pass


class DegenerateGuidanceError(OMNetError, ValueError):
    """A channel-importance denominator summed to zero."""


class NumericalError(OMNetError, FloatingPointError):
    pass


class EmptyDatasetError(OMNetError, ValueError):
    pass


class UndefinedMetricError(OMNetError, ValueError):
    pass


class FormatError(OMNetError, ValueError):
    pass
