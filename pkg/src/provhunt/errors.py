"""Exception hierarchy shared by every stage of the pipeline."""


class ProvHuntError(Exception):
    """Base class for all package errors."""


class ValidationError(ProvHuntError, ValueError):
    """Input or configuration rejected before any work is done."""


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(ValidationError):
    pass


class ConfigurationError(ValidationError):
    pass


class InvalidInputError(ValidationError):
    pass


class NotFoundError(ProvHuntError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "not found"


class NumericError(ProvHuntError, ArithmeticError):
    pass


class NonFiniteLossError(NumericError):
    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}
