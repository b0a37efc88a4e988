"""Exception hierarchy shared by every hmtnet module."""


class HMTNetError(Exception):
    """Base class for all errors raised by hmtnet."""


class ShapeError(HMTNetError, ValueError):
    """Tensor extents disagree with what an operation needs."""


class ConfigurationError(HMTNetError, ValueError):
    """A hyperparameter or layer configuration is invalid."""


class ContractError(HMTNetError, ValueError):
    """A caller violated an operation's precondition."""


class InvalidDepthError(HMTNetError, ValueError):
    """A depth value that must be positive is not."""


class NoHandError(HMTNetError):
    """A depth frame holds no foreground pixel to anchor a crop on."""


class EmptyCropError(HMTNetError):
    """A crop rectangle lies entirely outside the image."""


class ParseError(HMTNetError, ValueError):
    """A dataset file is malformed."""


class DatasetIndexError(HMTNetError, LookupError):
    """A dataset descriptor references a missing or inconsistent sample."""


class NumericFault(HMTNetError, FloatingPointError):
    """A loss term became NaN or infinite."""
