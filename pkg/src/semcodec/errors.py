"""Exception hierarchy shared by every stage of the codec."""


class CodecError(Exception):
    """Base class for all codec errors."""


class ConfigurationError(CodecError, ValueError):
    pass


class ShapeError(CodecError, ValueError):
    pass


class EmptyInputError(CodecError, ValueError):
    pass


class InsufficientDataError(CodecError, ValueError):
    pass


class StateError(CodecError, RuntimeError):
    pass


class FormatError(CodecError, ValueError):
    """Malformed file or packet (bad magic, truncated, bad shape)."""


class UnsupportedError(FormatError):
    """Well-formed input using an unsupported rate, layout or version."""


class CorruptionError(FormatError):
    """CRC mismatch."""


class EncodeError(CodecError, ValueError):
    pass


class NumericError(CodecError, FloatingPointError):
    """Training produced a non-finite value."""
