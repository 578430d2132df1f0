"""Exception hierarchy. Each category maps to a distinct CLI exit code."""


class ReidError(Exception):
    exit_code = 1


class DimensionError(ReidError, ValueError):
    exit_code = 10


class SymmetryError(DimensionError):
    pass


class ConvergenceError(ReidError, ArithmeticError):
    exit_code = 11


class NotPSDError(ReidError, ArithmeticError):
    exit_code = 12


class InsufficientSamplesError(ReidError, ValueError):
    exit_code = 13


class ParameterError(ReidError, ValueError):
    exit_code = 14


class UnsupportedOpError(ReidError, TypeError):
    exit_code = 15


class FormatError(ReidError):
    exit_code = 16


class SamplerError(ReidError, ValueError):
    exit_code = 17


class LabelError(ReidError, ValueError):
    exit_code = 18


class ProtocolError(ReidError):
    exit_code = 19


class StateError(ReidError):
    exit_code = 20


class ConfigError(ReidError, ValueError):
    exit_code = 21


class DataError(ReidError, ValueError):
    exit_code = 22


class DomainError(ReidError, ValueError):
    exit_code = 23


class OutOfRangeError(ReidError, IndexError):
    exit_code = 24
