"""Exception and warning types raised across the package."""


class CguqError(Exception):
    """Base class for all package errors."""


class DomainError(CguqError, ValueError):
    """Evaluation point outside the domain of a basis."""


class ArgumentError(CguqError, ValueError):
    """Malformed or inconsistent arguments."""


class ConfigurationError(CguqError, ValueError):
    """Invalid simulation or generator configuration."""


class ConditioningError(CguqError, ArithmeticError):
    """Linear system is singular or too badly conditioned to solve.

    Attributes
    ----------
    eigenvalues : ndarray or None
        Eigenvalues of the offending symmetric matrix, ascending.
    empty_columns : list of int
        Basis columns with no data support, when known.
    """

    def __init__(self, message, eigenvalues=None, empty_columns=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues
        self.empty_columns = list(empty_columns or [])


class IntegrabilityError(CguqError, ArithmeticError):
    """Boltzmann weight is not integrable on the quadrature domain."""


class UnsupportedBasisError(CguqError, TypeError):
    """Operation not defined for the given basis kind."""


class ResamplingError(CguqError, RuntimeError):
    """Too many failed refits during jackknife or bootstrap."""


class TuningError(CguqError, RuntimeError):
    """Monte Carlo step size could not reach a usable acceptance rate."""


class ShortSeriesWarning(UserWarning):
    """Time series too short for a reliable path-space estimate."""


class NewtonWarning(UserWarning):
    """Newton iteration fell back to gradient ascent or did not converge."""


class ExperimentError(CguqError, RuntimeError):
    """Too many failed trials in a validation experiment."""
