"""Exception hierarchy shared across the package.

The CLI maps ValidationError (bad inputs, malformed files, contract
violations) to exit code 2 and any other ImagoError to exit code 1.
"""


class ImagoError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ValidationError(ImagoError):
    """Invalid argument, configuration, or input data."""

    exit_code = 2


class DataFormatError(ValidationError):
    """Malformed serialized data; carries file/line context when known."""

    def __init__(self, message, path=None, line=None):
        ctx = ""
        if path is not None:
            ctx = f"{path}: "
        if line is not None:
            ctx += f"line {line}: "
        super().__init__(ctx + message)
        self.path = path
        self.line = line
