class SfgiError(Exception):
    """Base class for errors raised by this package."""


class InputError(SfgiError, ValueError):
    pass


class ResourceError(SfgiError):
    pass


class NumericError(SfgiError, ArithmeticError):
    pass


class UsageError(SfgiError, RuntimeError):
    pass


class ParseError(SfgiError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class VersionError(ParseError):
    pass


class TrainingError(SfgiError, RuntimeError):
    pass
