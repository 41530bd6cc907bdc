"""Exception hierarchy shared by all she_lab modules."""


class SheLabError(Exception):
    """Base class for every error raised by she_lab."""


class ConfigError(SheLabError):
    """Invalid user input: lattice geometry, labels, config files."""


class NumericalAbort(SheLabError):
    """A computation was aborted because its numerics broke down."""


class StabilityViolation(ConfigError):
    pass


class GeometryError(ConfigError):
    pass


class NonFiniteField(SheLabError):
    pass


class EmptyInput(SheLabError):
    pass


class TimeOutOfRange(SheLabError):
    pass


class OutOfDomain(SheLabError):
    pass


class NonPositiveTime(SheLabError):
    pass


class InvalidTimes(SheLabError):
    pass


class EmptySweep(SheLabError):
    pass


class QuadratureFailure(NumericalAbort):
    pass


class ParameterOutOfRegime(ConfigError):
    pass


class BlowUp(NumericalAbort):
    def __init__(self, message, time_index=None):
        super().__init__(message)
        self.time_index = time_index


class InitialOrderViolation(SheLabError):
    pass


class SupportViolation(SheLabError):
    pass


class DegenerateTrajectory(SheLabError):
    pass


class AssumptionAViolation(SheLabError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class LatticeMismatch(SheLabError):
    pass


class NonMonotoneAccumulator(SheLabError):
    pass


class InsufficientEnsemble(SheLabError):
    pass
