"""Exception hierarchy shared across the package.

Everything raised on purpose derives from IpckitError so callers can catch
one base class.  ParameterError doubles as ValueError because most call
sites are plain "you passed a bad argument" situations.
"""


class IpckitError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(IpckitError, ValueError):
    """Invalid argument: wrong size, wrong range, malformed value."""


class UnsupportedDegreeError(ParameterError):
    """No built-in irreducible modulus for the requested field degree."""


class PoolExhaustedError(IpckitError):
    """Key pool has fewer unconsumed bits than requested."""


class PoolFormatError(IpckitError):
    """Key pool file is malformed or fails its consistency checks."""


class BudgetExceededError(IpckitError):
    """Running a further round would overrun the security budget."""


class FrameError(IpckitError):
    """Base class for wire-format decode failures."""


class FrameMagicError(FrameError):
    """Frame does not start with the expected magic bytes."""


class FrameVersionError(FrameError):
    """Frame carries an unknown protocol version."""


class FrameTypeError(FrameError):
    """Frame carries an unknown frame type byte."""


class FrameLengthError(FrameError):
    """Declared payload length is out of range for the protocol."""


class FrameTruncatedError(FrameError):
    """Buffer ended before the declared payload length was available."""


class ProtocolError(IpckitError):
    """Peer sent a well-formed frame that is invalid at this protocol state."""
