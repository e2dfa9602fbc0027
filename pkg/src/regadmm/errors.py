"""Exception hierarchy shared across the package."""


class RegAdmmError(Exception):
    pass


class DimensionError(RegAdmmError, ValueError):
    pass


class PsdViolationError(RegAdmmError, ValueError):
    pass


class SingularSystemError(RegAdmmError, ArithmeticError):
    pass


class ConfigError(RegAdmmError, ValueError):
    """Invalid solver configuration. Subclasses name the violated condition."""


class StepsizeError(ConfigError):
    pass


class PenaltyError(ConfigError):
    pass


class ToleranceError(ConfigError):
    pass


class ProximalFactorError(ConfigError):
    pass


class ConfigDimensionError(ConfigError, DimensionError):
    pass


class StrategyError(ConfigError):
    """No supported closed-form strategy for a subproblem."""


class UnsupportedFunctionError(RegAdmmError, TypeError):
    pass


class RegimeError(RegAdmmError, ValueError):
    """Analysis constants requested outside their feasibility region."""


class MissingWitnessError(RegAdmmError, ValueError):
    pass


class NonConvergenceError(RegAdmmError, RuntimeError):
    def __init__(self, message, trace=None, state=None):
        super().__init__(message)
        self.trace = trace
        self.state = state
