"""Exception hierarchy shared by all solver modules."""


class HJBError(Exception):
    """Base class for every error raised by :mod:`gchjb`."""

    #: process exit status used by the command line front end
    exit_code = 1


class EmptyDomain(HJBError):
    pass


class MissingNeighbor(HJBError):
    pass


class OutOfDomain(HJBError):
    pass


class WrongRegime(HJBError):
    pass


class DegenerateMatching(HJBError):
    pass


class NoInterface(HJBError):
    pass


class EmptyInterface(HJBError):
    pass


class BadParameter(HJBError, ValueError):
    exit_code = 2


class NoConvergence(HJBError):
    """Iteration budget exhausted before the stopping rule was met.

    The partial residual history is attached so callers can report it.
    """

    exit_code = 3

    def __init__(self, message, residual_history=None, partial=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])
        self.partial = partial


class ConfigError(HJBError):
    exit_code = 2

    def __init__(self, message, line=None, field=None):
        super().__init__(message)
        self.line = line
        self.field = field
