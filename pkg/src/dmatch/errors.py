"""Exception hierarchy."""


class DMatchError(Exception):
    """Base class for all errors raised by this package."""


class StructuralError(DMatchError, ValueError):
    """Shapes, layouts or simplicial structure do not fit together."""


class PreconditionError(DMatchError, ValueError):
    """An input violates an operation's precondition."""


class ConfigError(DMatchError, ValueError):
    """Invalid solver or cover configuration."""


class ProtocolError(DMatchError, RuntimeError):
    """Message exchange between cover nodes is incomplete or malformed."""


class CoverRefusedError(DMatchError, RuntimeError):
    """The cover complex failed verification and no override was given."""
