"""Exception hierarchy shared by the library and the command line."""


class NowcastError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(NowcastError, ValueError):
    """Invalid configuration or parameter combination."""


class DataError(NowcastError, ValueError):
    """Input data is missing, malformed or inconsistent."""


class ParseError(DataError):
    """A data file could not be parsed.

    The message always names the file and, where applicable, the line.
    """

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class DomainError(NowcastError, ValueError):
    """A numerical input is outside the domain of the operation."""


class InferenceError(NowcastError, RuntimeError):
    """The sampler failed."""


class InitializationError(InferenceError):
    """No finite starting point could be found for the sampler."""
