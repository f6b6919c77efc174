"""Error taxonomy shared by every service; the CLI maps each branch to an exit code."""


class QsdLabError(Exception):
    exit_code = 1


class ConfigurationError(QsdLabError):
    exit_code = 2


class ParameterError(ConfigurationError, ValueError):
    pass


class DomainError(ConfigurationError, ValueError):
    pass


class StructureError(ConfigurationError):
    pass


class NumericalError(QsdLabError):
    exit_code = 3


class ConvergenceError(NumericalError):
    def __init__(self, message: str, attained: float = float("nan")):
        super().__init__(message)
        self.attained = attained


class SchemeError(NumericalError):
    pass


class ConsistencyError(NumericalError):
    pass


class GrowthError(NumericalError):
    def __init__(self, message: str, t_reached: float = float("nan")):
        super().__init__(message)
        self.t_reached = t_reached


class ExtinctionError(QsdLabError):
    exit_code = 4

    def __init__(self, message: str, t: float = float("nan")):
        super().__init__(message)
        self.t = t
