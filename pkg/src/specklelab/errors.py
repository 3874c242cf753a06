"""Exception hierarchy shared by all specklelab modules."""


class SpeckleLabError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SpeckleLabError):
    """Array dimensions or channel counts do not match the operation's contract."""


class ConfigError(SpeckleLabError):
    """A parameter value is outside its documented domain (even kernel size, L < 1, ...)."""


class DegenerateBatchError(ConfigError):
    """Batch statistics requested over fewer than two values."""


class NumericError(SpeckleLabError):
    """A non-finite value appeared where the computation requires finite numbers."""


class FormatError(SpeckleLabError):
    """A binary or text file does not conform to its documented format.

    Messages include the byte offset of the first inconsistency when known.
    """


class EmptyCorpusError(SpeckleLabError):
    """No usable source image was found when building a patch dataset."""
