"""Exception hierarchy. Each category maps to a distinct CLI exit code."""


class TwinPredError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


class ConfigError(TwinPredError):
    exit_code = 3


class ParseError(TwinPredError):
    exit_code = 4

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class SchemaError(ParseError):
    exit_code = 5


class VocabularyError(ParseError):
    exit_code = 6


class IntegrityError(TwinPredError):
    exit_code = 7


class DivergenceError(TwinPredError):
    exit_code = 8


class HorizonMismatchError(TwinPredError):
    exit_code = 9


class ContractError(TwinPredError, ValueError):
    """Raised when a function is called outside its documented preconditions."""

    exit_code = 10
