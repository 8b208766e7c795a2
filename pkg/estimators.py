"""
LSE, GLSE and the pseudo best estimator (PBE).

The PBE replaces the true covariance by a separable AR model
S~ = S~1 kron S~2. Each S~i^-1 = Bi' Bi / sigma_i^2 with Bi lower banded, so
X' S~^-1 y = (B X)' (B y) / sigma_12^2 where B = B1 kron B2 is applied to an
N x N array as a filter along each axis. Nothing of size N^2 x N^2 is formed.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg

from covariance import Ar1Params, Ar2Params, Product, ar_spectral_density, check_causal
from design import LatticeDesign
from errors import (ConditioningWarning, IndefiniteCovarianceError, ParameterDomainError,
                    SingularDesignError)

LOGGER = logging.getLogger(__name__)

CONDITIONING_LIMIT = 0.999


class Estimator(str, Enum):
    LSE = "LSE"
    GLSE = "GLSE"
    PBE = "PBE"


@dataclass(frozen=True)
class EstimateRecord:
    estimator: Estimator
    beta: np.ndarray
    seconds: float
    seed: int | None = None


def _design_matrix(design) -> np.ndarray:
    X = design.X if isinstance(design, LatticeDesign) else np.asarray(design, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def _solve_normal(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        factor = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as e:
        raise SingularDesignError(f"normal matrix is singular: {e}") from e
    return scipy.linalg.cho_solve(factor, b, check_finite=False)


# ---------------------------- LSE / GLSE ---------------------------- #

def lse(design, y) -> np.ndarray:
    X = _design_matrix(design)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularDesignError(f"design of rank {np.linalg.matrix_rank(X)} < p = {X.shape[1]}")
    return _solve_normal(X.T @ X, X.T @ np.asarray(y, dtype=float))


class DenseGls:
    """GLS under a dense covariance: one Cholesky of Sigma, reused for every response."""

    def __init__(self, design, Sigma: np.ndarray):
        X = _design_matrix(design)
        try:
            self._factor = scipy.linalg.cho_factor(Sigma, lower=True, check_finite=False)
        except np.linalg.LinAlgError as e:
            raise IndefiniteCovarianceError(f"covariance matrix is not positive definite: {e}") from e
        self._weighted = scipy.linalg.cho_solve(self._factor, X, check_finite=False)
        self._normal = X.T @ self._weighted

    def estimate(self, y) -> np.ndarray:
        return _solve_normal(self._normal, self._weighted.T @ np.asarray(y, dtype=float))


def glse(design, y, Sigma: np.ndarray) -> np.ndarray:
    return DenseGls(design, Sigma).estimate(y)


# ---------------------------- Banded AR precision factor ---------------------------- #

def stationary_autocov(phi: tuple[float, ...], sigma2: float) -> np.ndarray:
    """gamma(0), ..., gamma(P-1) of a causal AR(P), P in {1, 2}."""
    if len(phi) == 1:
        return np.array([sigma2 / (1.0 - phi[0] ** 2)])
    if len(phi) == 2:
        a, b = phi
        g0 = sigma2 * (1.0 - b) / ((1.0 + b) * ((1.0 - b) ** 2 - a ** 2))
        return np.array([g0, a * g0 / (1.0 - b)])
    raise ParameterDomainError(f"AR order must be 1 or 2, got {len(phi)}")


@dataclass(frozen=True)
class ArPrecisionFactor:
    """
    B such that B'B / sigma2 is the inverse of the N x N AR(P) covariance matrix.

    The first P rows hold a lower triangular block `head` with
    head' head = sigma2 * Gamma_P^-1; every later row is the filter
    (-phi_P, ..., -phi_1, 1).
    """

    order: int
    phi: tuple[float, ...]
    head: np.ndarray
    sigma2: float
    N: int

    def apply(self, A: np.ndarray, axis: int = 0) -> np.ndarray:
        A = np.moveaxis(np.asarray(A, dtype=float), axis, 0)
        P, N = self.order, self.N
        out = np.empty_like(A)
        out[:P] = np.tensordot(self.head, A[:P], axes=(1, 0))
        out[P:] = A[P:]
        for k, coeff in enumerate(self.phi, start=1):
            out[P:] -= coeff * A[P - k:N - k]
        return np.moveaxis(out, 0, axis)

    def apply_transpose(self, U: np.ndarray, axis: int = 0) -> np.ndarray:
        U = np.moveaxis(np.asarray(U, dtype=float), axis, 0)
        P, N = self.order, self.N
        out = np.zeros_like(U)
        out[:P] = np.tensordot(self.head.T, U[:P], axes=(1, 0))
        out[P:] += U[P:]
        for k, coeff in enumerate(self.phi, start=1):
            out[P - k:N - k] -= coeff * U[P:]
        return np.moveaxis(out, 0, axis)

    def matrix(self) -> np.ndarray:
        return self.apply(np.eye(self.N), axis=0)

    def precision(self) -> np.ndarray:
        B = self.matrix()
        return B.T @ B / self.sigma2


def ar_precision_factor(phi, sigma2: float, N: int) -> ArPrecisionFactor:
    phi = tuple(float(c) for c in np.atleast_1d(phi))
    check_causal(phi)
    P = len(phi)
    if N <= P:
        raise ParameterDomainError(f"need N > P, got N = {N}, P = {P}")
    gam = stationary_autocov(phi, sigma2)
    target = sigma2 * np.linalg.inv(scipy.linalg.toeplitz(gam))
    # lower L with L'L = target: flip, upper Cholesky, flip back
    upper = scipy.linalg.cholesky(target[::-1, ::-1], lower=False)
    head = np.ascontiguousarray(upper[::-1, ::-1])
    return ArPrecisionFactor(order=P, phi=phi, head=head, sigma2=float(sigma2), N=N)


# ---------------------------- Separable AR model ---------------------------- #

@dataclass(frozen=True)
class ArAxis:
    """Causal AR(1) or AR(2) with unit innovation variance along one lattice axis."""

    coeffs: tuple[float, ...]

    def __post_init__(self):
        coeffs = tuple(float(c) for c in np.atleast_1d(self.coeffs))
        if len(coeffs) not in (1, 2):
            raise ParameterDomainError(f"AR order must be 1 or 2, got {len(coeffs)}")
        check_causal(coeffs)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def order(self) -> int:
        return len(self.coeffs)

    def roots(self) -> np.ndarray:
        return check_causal(self.coeffs)

    def kernel(self, sigma2: float = 1.0) -> Ar1Params | Ar2Params:
        # b = 0 is an AR(1) written with two coefficients
        if self.order == 1 or self.coeffs[1] == 0.0:
            return Ar1Params(phi=self.coeffs[0], sigma2=sigma2)
        return Ar2Params.from_coeffs(*self.coeffs, sigma2=sigma2)

    def unit_variance(self) -> float:
        return float(stationary_autocov(self.coeffs, 1.0)[0])

    def as_dict(self) -> dict:
        out = {"order": self.order, "coeffs": list(self.coeffs)}
        if self.order == 2:
            out["roots"] = [[complex(r).real, complex(r).imag] for r in self.roots()]
        return out


@dataclass(frozen=True)
class SeparableARModel:
    axis1: ArAxis
    axis2: ArAxis
    sigma12: float

    def __post_init__(self):
        if not self.sigma12 > 0:
            raise ParameterDomainError(f"sigma12^2 must be > 0, got {self.sigma12!r}")

    @classmethod
    def from_coeffs(cls, coeffs1, coeffs2, sigma12: float = 1.0) -> "SeparableARModel":
        return cls(ArAxis(tuple(np.atleast_1d(coeffs1))), ArAxis(tuple(np.atleast_1d(coeffs2))), float(sigma12))

    @property
    def orders(self) -> tuple[int, int]:
        return self.axis1.order, self.axis2.order

    def variance(self) -> float:
        """gamma(0, 0) = sigma12^2 * gamma'(0, 0)."""
        return self.sigma12 * self.axis1.unit_variance() * self.axis2.unit_variance()

    def autocov(self, h1, h2):
        return self.sigma12 * np.asarray(self.axis1.kernel().autocov(h1)) * np.asarray(self.axis2.kernel().autocov(h2))

    def spectral_density(self, lambda1, lambda2):
        """g(l1, l2) = g1(l1) g2(l2) with the product innovation scale sigma12^2."""
        return (ar_spectral_density(lambda1, self.axis1.coeffs, self.sigma12)
                * ar_spectral_density(lambda2, self.axis2.coeffs, 1.0))

    def as_covariance_model(self) -> Product:
        return Product(self.axis1.kernel(self.sigma12), self.axis2.kernel(1.0))

    def max_inverse_root(self) -> float:
        roots = np.concatenate([self.axis1.roots(), self.axis2.roots()])
        return float(np.max(1.0 / np.abs(roots))) if roots.size else 0.0

    def precision_factors(self, N: int) -> tuple[ArPrecisionFactor, ArPrecisionFactor]:
        return ar_precision_factor(self.axis1.coeffs, 1.0, N), ar_precision_factor(self.axis2.coeffs, 1.0, N)

    def precision_apply(self, v: np.ndarray, N: int) -> np.ndarray:
        """S~^-1 v = vec((B1'B1) V (B2'B2)) / sigma12^2 for a t1-major vector v."""
        F1, F2 = self.precision_factors(N)
        V = np.reshape(v, (N, N))
        V = F1.apply_transpose(F1.apply(V, axis=0), axis=0)
        V = F2.apply_transpose(F2.apply(V, axis=1), axis=1)
        return V.ravel() / self.sigma12

    def as_dict(self) -> dict:
        return {"axis1": self.axis1.as_dict(), "axis2": self.axis2.as_dict(), "sigma12": self.sigma12}


class PseudoBestEstimator:
    """PBE under a fixed separable AR model; X is whitened once on construction."""

    def __init__(self, design: LatticeDesign, sep: SeparableARModel):
        N = design.N
        if N <= max(sep.orders):
            raise ParameterDomainError(f"need N > AR order, got N = {N}, orders = {sep.orders}")
        worst = sep.max_inverse_root()
        if worst > CONDITIONING_LIMIT:
            warnings.warn(f"separable model has a root near the unit circle (max 1/|root| = {worst:.6f})",
                          ConditioningWarning, stacklevel=2)
        self._N = N
        self._F1, self._F2 = sep.precision_factors(N)
        self._Xw = self._whiten(design.X.reshape(N, N, design.p)).reshape(N * N, design.p)
        self._normal = self._Xw.T @ self._Xw

    def _whiten(self, grid: np.ndarray) -> np.ndarray:
        return self._F2.apply(self._F1.apply(grid, axis=0), axis=1)

    def estimate(self, y) -> np.ndarray:
        yw = self._whiten(np.reshape(np.asarray(y, dtype=float), (self._N, self._N))).ravel()
        return _solve_normal(self._normal, self._Xw.T @ yw)


def pbe(design: LatticeDesign, y, sep: SeparableARModel) -> np.ndarray:
    return PseudoBestEstimator(design, sep).estimate(y)


def scaled_empirical_covariance(estimates, design) -> np.ndarray:
    """D S D, S the sample covariance of the estimates and D = diag(||x_i||)."""
    E = np.asarray(estimates, dtype=float)
    E = E.reshape(E.shape[0], -1)
    if E.shape[0] < 2:
        raise ParameterDomainError("need at least two estimates")
    S = np.atleast_2d(np.cov(E, rowvar=False, ddof=1))
    norms = design.norms if isinstance(design, LatticeDesign) else np.sqrt(np.sum(_design_matrix(design) ** 2, axis=0))
    D = np.diag(norms)
    return D @ S @ D
