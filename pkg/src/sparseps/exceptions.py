"""Exception types raised by the estimation routines."""


class SparsePSError(Exception):
    """Base class for all estimation errors."""


class DataFormatError(SparsePSError, ValueError):
    """Malformed input data (CSV contract violation, bad shapes/values).

    Carries ``row`` (1-based data row, header excluded) when the problem
    is attributable to a specific CSV line.
    """

    def __init__(self, message: str, row: int | None = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class NoConvergence(SparsePSError):
    """An iterative solver exhausted its iteration budget."""


class SingularInformation(SparsePSError):
    """Information (curvature) matrix numerically singular.

    Signals separation or collinearity: condition number above 1e12, or a
    failed Cholesky factorization of a matrix that should be positive
    definite on well-posed input.
    """


class NoRespondents(SparsePSError):
    """No observed outcomes: every response indicator is zero."""


class SingularWeight(SparsePSError):
    """GMM weighting matrix unusable even after ridge stabilization."""


class ChainFailure(SparsePSError):
    """Too many failed iterations inside an MCMC chain (> 1%)."""
