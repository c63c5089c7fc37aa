"""Exception hierarchy. The CLI maps each class to a process exit code."""


class AgingEcmError(Exception):
    exit_code = 1


class ConfigError(AgingEcmError, ValueError):
    exit_code = 2


class DataError(AgingEcmError, ValueError):
    exit_code = 3


class NumericalError(AgingEcmError, ArithmeticError):
    exit_code = 4
