"""Exception hierarchy shared by the package."""

import numpy as np


class AdrSplitError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(AdrSplitError, ValueError):
    pass


class FactorizationError(AdrSplitError, np.linalg.LinAlgError):
    """Raised when a matrix expected to be SPD cannot be factored."""


class SingularResolventError(AdrSplitError, np.linalg.LinAlgError):
    pass


class ParameterError(AdrSplitError, ValueError):
    pass


class OutOfTheoryError(AdrSplitError, ValueError):
    """Moduli fall outside every regime the convergence theory covers."""


class InfeasibleThetaError(AdrSplitError, ValueError):
    pass


class CertificationError(AdrSplitError):
    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class UnsupportedSubproblemError(AdrSplitError, NotImplementedError):
    pass


class NonStronglyConvexError(AdrSplitError, ValueError):
    pass


class AssumptionError(AdrSplitError, ValueError):
    pass


class NotReadyError(AdrSplitError, RuntimeError):
    pass


class DivergenceError(AdrSplitError, RuntimeError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ResolventFailure(AdrSplitError, RuntimeError):
    """Wraps an error raised inside a resolvent evaluation with its iteration index."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ConfigError(AdrSplitError, ValueError):
    pass
