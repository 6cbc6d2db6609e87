"""Exception types raised by the pipeline."""


class HygroflowError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(HygroflowError, ValueError):
    """A parameter value violates an operation's precondition."""


class DegenerateInputError(HygroflowError, ValueError):
    """Input data is degenerate for the requested operation (e.g. constant image)."""


class SegmentationError(HygroflowError, RuntimeError):
    """Specimen segmentation found no usable foreground object."""


class ConfigError(HygroflowError, ValueError):
    """Pipeline configuration is invalid or incomplete."""


class MissingArtifactError(HygroflowError, FileNotFoundError):
    """A pipeline stage requires artifacts that have not been produced yet."""
