"""Exception hierarchy. Each family maps onto a CLI exit code."""


class HarnessError(Exception):
    exit_code = 1


class ConfigError(HarnessError, ValueError):
    exit_code = 2


class ShapeError(ConfigError):
    pass


class DataError(HarnessError, ValueError):
    exit_code = 3


class InvalidLabelError(DataError):
    pass


class NestingError(DataError):
    pass


class SplitError(DataError):
    pass


class DomainError(DataError):
    pass


class UndefinedMetricError(DataError):
    pass


class NumericalError(HarnessError, ArithmeticError):
    exit_code = 4


class ConditioningError(NumericalError):
    pass


class GradientError(NumericalError):
    def __init__(self, msg, coordinate=None):
        super().__init__(msg)
        self.coordinate = coordinate


class DivergenceError(NumericalError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


class SolverError(NumericalError):
    def __init__(self, msg, draw=None):
        super().__init__(msg)
        self.draw = draw


class OracleSizeError(ConfigError):
    pass
