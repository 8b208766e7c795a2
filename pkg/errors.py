from __future__ import annotations

# Exit codes used by main.py, keyed by LatticeError.category
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

EXIT_CODES = {
    "config": EXIT_CONFIG,
    "numerical": EXIT_NUMERICAL,
    "io": EXIT_IO,
}


class LatticeError(Exception):
    """Base class for every error raised by the toolkit."""

    category = "numerical"


class ParameterDomainError(LatticeError, ValueError):
    """Kernel or model parameters outside their valid domain."""


class NonstationaryError(ParameterDomainError):
    """AR coefficients whose characteristic roots are not outside the unit disk."""


class DegenerateRootError(ParameterDomainError):
    """Repeated AR(2) roots; the closed-form autocovariance is singular there."""


class OrderDegeneracyError(ParameterDomainError):
    """b = 0, so an AR(2) collapses to an AR(1) and has no second root."""


class TruncationError(LatticeError):
    """The truncated lattice sum did not give a usable spectral density."""


class LagRangeError(LatticeError, IndexError):
    """A lag that does not fit on the N x N lattice."""


class SingularDesignError(LatticeError):
    """X'X (or X' S^-1 X) is rank deficient."""


class IndefiniteCovarianceError(LatticeError):
    """A covariance matrix failed its Cholesky factorization."""


class SingularSpectrumError(LatticeError):
    """A spectral density is not strictly positive at a jump of M."""


class SizeLimitError(LatticeError):
    """A dense N^2 x N^2 path was requested above the configured cap."""


class NonstationaryFitError(LatticeError):
    """A Yule-Walker style fit produced a non-causal AR model."""


class ConfigError(LatticeError):
    category = "config"


class ConditioningWarning(UserWarning):
    """The separable model has a root close to the unit circle."""


class ProtocolWarning(UserWarning):
    """Too many replicates were excluded by failed fits."""


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, LatticeError):
        return EXIT_CODES.get(exc.category, EXIT_NUMERICAL)
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_NUMERICAL


def category_for(exc: BaseException) -> str:
    if isinstance(exc, LatticeError):
        return exc.category
    if isinstance(exc, OSError):
        return "io"
    return "numerical"
