"""Exception hierarchy shared by all probhull modules."""


class ProbHullError(Exception):
    """Base class for every error raised by probhull."""


class ConfigError(ProbHullError, ValueError):
    """Inconsistent dimensions, invalid parameters or missing inputs."""


class ParseError(ProbHullError, ValueError):
    """A network, spec or config file could not be parsed.

    ``location`` is a line number (NNet) or a JSON path (JSON inputs).
    """

    def __init__(self, message, location=None):
        self.location = location
        if location is not None:
            message = f"{location}: {message}"
        super().__init__(message)


class NumericUnderflowError(ProbHullError, ArithmeticError):
    """Region carries too little probability mass to sample from.

    Callers should treat the region as negligible.
    """


class InternalConsistencyError(ProbHullError, RuntimeError):
    """A bookkeeping invariant of the hull inventory was violated."""
