"""Exception hierarchy. The CLI maps each family to an exit code."""


class RiskpipeError(Exception):
    exit_code = 1


class ConfigError(RiskpipeError, ValueError):
    exit_code = 2


class DataError(RiskpipeError, ValueError):
    exit_code = 3


class StoreError(DataError):
    pass


class NumericalError(RiskpipeError, ArithmeticError):
    exit_code = 4
