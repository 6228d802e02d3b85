"""Exception hierarchy. Each family maps to one CLI exit code."""


class MetafuseError(Exception):
    exit_code = 1


class ConfigError(MetafuseError):
    exit_code = 2


class ParameterError(ConfigError):
    pass


class DataError(MetafuseError):
    exit_code = 3


class FormatError(DataError):
    pass


class SizeError(DataError):
    pass


class ShapeError(DataError):
    pass


class CalibrationError(DataError):
    pass


class DegenerateInputError(DataError):
    pass


class NumericError(MetafuseError):
    exit_code = 4


class TransformError(NumericError):
    pass
