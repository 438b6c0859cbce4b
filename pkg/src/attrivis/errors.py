"""Exception types shared across the package."""


class AttrivisError(Exception):
    """Base class for all errors raised by this package."""


class InvalidShape(AttrivisError):
    """A shape argument is empty, non-positive, or incompatible with an op."""


class ShapeMismatch(AttrivisError):
    """Two operands that must agree in shape do not."""


class EmptyDataset(AttrivisError):
    """A dataset or manifest contains no examples."""


class EmptySet(AttrivisError):
    """A prediction set contains no entries."""


class EmptyClass(AttrivisError):
    """No example of the requested class is available."""


class DegenerateAttribute(AttrivisError):
    """An attribute's ratings cannot be split into two classes."""


class DegenerateLabels(AttrivisError):
    """A training set contains only one class."""


class InvalidImage(AttrivisError):
    """An image is too small or malformed for preprocessing."""


class InvalidSplit(AttrivisError):
    """A cross-validation split request or assignment is inconsistent."""


class InvalidSpec(AttrivisError):
    """A synthetic-dataset specification violates its constraints."""

class MissingImage(AttrivisError):
    """A manifest row points at an image file that does not exist."""


class ParseError(AttrivisError):
    """A manifest or config file is malformed; the message carries the line."""


class ConfigError(AttrivisError):
    """A run configuration contains unknown or invalid keys."""


class CorruptSwitches(AttrivisError):
    """Recorded pooling switch indices fall outside the unpooling target."""


class UndefinedCorrelation(AttrivisError):
    """Pearson correlation is undefined (constant input or too few points)."""


class InsufficientRaters(AttrivisError):
    """Leave-one-out scoring needs at least two raters."""


class MissingArtifact(AttrivisError):
    """A pipeline stage input is absent; the message names the producing command."""


class IoError(AttrivisError):
    """A file could not be read or written."""


class DegenerateNetworkWarning(UserWarning):
    """Deconvolution was asked to project through an all-zero network."""
