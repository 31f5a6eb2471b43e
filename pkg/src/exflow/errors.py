"""Exception types shared across the package.

The CLI maps :class:`ConfigError` to exit status 2 and every other
:class:`ExflowError` to exit status 1.
"""


class ExflowError(Exception):
    """Base class for all errors raised by exflow."""


class ConfigError(ExflowError, ValueError):
    """Invalid parameters: divisibility, ranges, bad flag combinations."""


class StateCapExceeded(ConfigError):
    """The exact solver would need more DP states than allowed."""


class TraceFormatError(ExflowError, ValueError):
    """Malformed EXFLOW-TRACE input."""


class ShapeMismatchError(ExflowError, ValueError):
    """Two objects (trace, counts, placement, topology) disagree on shape."""
