"""
Covariance matrices of the lattice field and Gaussian field sampling.

Separable models never build the N^2 x N^2 matrix: their factor is
chol(S1) kron chol(S2), applied to an N x N array of normals by reshaping.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from covariance import CovarianceModel, Kernel1D
from errors import IndefiniteCovarianceError, SizeLimitError

LOGGER = logging.getLogger(__name__)

DENSE_CAP = 128


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; replicate r of a run uses seed base_seed + r."""
    return np.random.Generator(np.random.Philox(int(seed)))


def replicate_seed(base_seed: int, index: int) -> int:
    return int(base_seed) + int(index)


def kron_apply(A: np.ndarray, B: np.ndarray, v: np.ndarray) -> np.ndarray:
    """(A kron B) v for a t1-major vector v, via vec(A V B')."""
    V = np.reshape(v, (A.shape[1], B.shape[1]))
    return (A @ V @ B.T).ravel()


def axis_covariance(kernel: Kernel1D, N: int) -> np.ndarray:
    return scipy.linalg.toeplitz(np.asarray(kernel.autocov(np.arange(N)), dtype=float))


def assemble_sigma(model: CovarianceModel, N: int, dense_cap: int = DENSE_CAP) -> np.ndarray:
    """Sigma[(s1,s2),(t1,t2)] = gamma(s1 - t1, s2 - t2) in t1-major order."""
    if N > dense_cap:
        raise SizeLimitError(f"dense covariance for N = {N} exceeds the cap {dense_cap}; "
                             "use the Kronecker path for separable models")
    if model.separable:
        return np.kron(axis_covariance(model.axis1, N), axis_covariance(model.axis2, N))
    lags = np.arange(-(N - 1), N)
    table = np.asarray(model.cov(lags[:, None], lags[None, :]), dtype=float)
    idx = np.arange(N)[:, None] - np.arange(N)[None, :] + (N - 1)
    return table[idx[:, None, :, None], idx[None, :, None, :]].reshape(N * N, N * N)


def lower_cholesky(S: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.cholesky(S, lower=True, check_finite=False)
    except np.linalg.LinAlgError as e:
        raise IndefiniteCovarianceError(f"covariance matrix is not positive definite: {e}") from e


@dataclass(frozen=True)
class FieldSample:
    N: int
    eps: np.ndarray
    seed: int


class FieldSampler:
    """Factor the model covariance once, then draw any number of seeded fields."""

    def __init__(self, model: CovarianceModel, N: int, dense_cap: int = DENSE_CAP, force_dense: bool = False):
        self._N = N
        self._kron = model.separable and not force_dense
        if self._kron:
            self._l1 = lower_cholesky(axis_covariance(model.axis1, N))
            self._l2 = lower_cholesky(axis_covariance(model.axis2, N))
        else:
            LOGGER.debug("dense Cholesky of a %d x %d covariance", N * N, N * N)
            self._chol = lower_cholesky(assemble_sigma(model, N, dense_cap))

    @property
    def N(self) -> int:
        return self._N

    def draw(self, seed: int) -> FieldSample:
        z = make_rng(seed).standard_normal(self._N * self._N)
        if self._kron:
            eps = kron_apply(self._l1, self._l2, z)
        else:
            eps = self._chol @ z
        return FieldSample(N=self._N, eps=eps, seed=int(seed))


def sample_field(model: CovarianceModel, N: int, seed: int, dense_cap: int = DENSE_CAP,
                 force_dense: bool = False) -> FieldSample:
    return FieldSampler(model, N, dense_cap=dense_cap, force_dense=force_dense).draw(seed)
