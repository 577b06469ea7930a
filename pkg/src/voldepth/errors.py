"""Exception hierarchy shared across the package."""


class VoldepthError(Exception):
    """Base class for all errors raised by voldepth."""


class DeflateError(VoldepthError, ValueError):
    """Malformed or truncated DEFLATE stream."""


class DimensionError(VoldepthError, ValueError):
    """Frame geometry does not match what the operation expects."""


class SequencingError(VoldepthError, ValueError):
    """Frames were handed to the encoder out of order."""


class DecodeError(VoldepthError):
    """A depth packet could not be decoded."""


class DesyncError(DecodeError):
    """Delta packet does not apply to the decoder's current reconstruction.

    The receiver must ask the sender for a keyframe.
    """


class FormatError(VoldepthError, ValueError):
    """A file or wire buffer does not follow its binary layout."""


class ParameterError(VoldepthError, ValueError):
    """Invalid configuration value."""


class TopologyError(VoldepthError, ValueError):
    """Session roles violate the multiplicity rules."""


class AnnotationError(VoldepthError, ValueError):
    """Annotation event references an unknown or duplicate object id."""
