"""
Exceptions raised by the toolkit. All derive from ValueError so existing
`except ValueError` call sites keep working. main.py maps them to exit codes.
"""

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigurationError(ValueError):
    exit_code = EXIT_CONFIG


class CheckpointMismatchError(ConfigurationError):
    pass


class ShapeError(ValueError):
    exit_code = EXIT_CONFIG


class DataError(ValueError):
    exit_code = EXIT_DATA


class StructuralError(DataError):
    pass


class ValidationError(DataError):
    pass


class ParseError(DataError):

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        location = ""
        if path is not None:
            location += f"{path}"
        if line is not None:
            location += f" line {line}"
        super().__init__(f"{location}: {message}" if location else message)


class InsufficientDataError(DataError):
    pass


class MissingResultsError(DataError):
    pass


class NumericError(ValueError):
    exit_code = EXIT_NUMERIC


class GradientCheckFailure(NumericError):

    def __init__(self, message, parameter=None):
        self.parameter = parameter
        super().__init__(message)


class FrozenBoxWarning(UserWarning):
    """a frame marked invisible does not repeat the last visible box"""
