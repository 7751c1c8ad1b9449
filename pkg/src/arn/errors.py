"""Exception hierarchy shared by every layer of the package."""


class ARNError(Exception):
    """Base class for all errors raised by :mod:`arn`."""


class ParameterError(ARNError, ValueError):
    """A numeric parameter is outside its valid domain."""


class EmptyCoverageError(ParameterError):
    """The threshold is at or above the resonator peak, so nothing is covered."""


class StructuralError(ARNError, ValueError):
    """Input arity or shape does not match the layer or tiling."""


class DuplicateNodeError(ARNError):
    """A node with the same resonant centre already exists in the layer."""


class StateError(ARNError):
    """Operation is not valid in the current state (untrained, mismatched model...)."""


class CapacityError(StateError):
    """The lower layer grew past the feature-index capacity of the upper layer."""


class VersionError(StateError):
    """A file or trace was produced by a different format or model version."""


class HashMismatchError(StateError):
    """Model file content does not match its recorded digest."""


class ModelFormatError(StateError):
    """Model file is missing a field or has a field of the wrong type."""


class ParseError(ARNError, ValueError):
    """IDX payload could not be parsed."""


class BadMagicError(ParseError):
    pass


class TruncatedError(ParseError):
    pass


class CountMismatchError(ParseError):
    pass


class ConfigError(ARNError, ValueError):
    """Run configuration is invalid."""
