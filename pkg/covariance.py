"""
Stationary covariance kernels on the integer lattice and their spectral densities.

Kernels used as true error models (isotropic Matern, products of 1-D
Matern / AR kernels) and as separable approximations (AR(1), AR(2) per axis).
The lattice (aliased) spectral density is computed from the covariance by a
truncated lattice sum, so the folding onto [-pi, pi]^2 is exact by construction.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from errors import (DegenerateRootError, NonstationaryError, OrderDegeneracyError,
                    ParameterDomainError, TruncationError, ConfigError)

TWO_PI = 2.0 * math.pi

MAX_TRUNCATION = 512
TAIL_TOLERANCE = 1e-12
IMAG_TOLERANCE = 1e-12


def _as_result(values: np.ndarray, like):
    if np.ndim(like) == 0:
        return float(np.reshape(values, ()))
    return values


# ---------------------------- Matern ---------------------------- #

@dataclass(frozen=True)
class MaternParams:
    nu: float
    rho: float
    sigma2: float = 1.0

    def __post_init__(self):
        for name in ("nu", "rho", "sigma2"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ParameterDomainError(f"Matern {name} must be > 0, got {value!r}")

    def as_dict(self) -> dict:
        return {"kind": "matern", "nu": self.nu, "rho": self.rho, "sigma2": self.sigma2}


def matern_cov(x, p: MaternParams):
    """c(x) = s2 / (2^(nu-1) Gamma(nu)) * u^nu K_nu(u),  u = 2 sqrt(nu) |x| / rho."""
    dist = np.abs(np.atleast_1d(np.asarray(x, dtype=float)))
    out = np.full(dist.shape, float(p.sigma2))
    pos = dist > 0
    if np.any(pos):
        u = 2.0 * math.sqrt(p.nu) * dist[pos] / p.rho
        norm = p.sigma2 / (2.0 ** (p.nu - 1.0) * gamma_fn(p.nu))
        out[pos] = norm * u ** p.nu * kv(p.nu, u)
    return _as_result(out, x)


# ---------------------------- Autoregressions ---------------------------- #

@dataclass(frozen=True)
class Ar1Params:
    phi: float
    sigma2: float = 1.0

    def __post_init__(self):
        if not abs(self.phi) < 1.0:
            raise NonstationaryError(f"AR(1) requires |phi| < 1, got {self.phi!r}")
        if not self.sigma2 > 0:
            raise ParameterDomainError(f"innovation variance must be > 0, got {self.sigma2!r}")

    @classmethod
    def normalized(cls, phi: float) -> "Ar1Params":
        """sigma2 chosen so that the autocovariance at lag 0 equals 1."""
        return cls(phi=phi, sigma2=1.0 - phi * phi)

    @property
    def coeffs(self) -> tuple[float, ...]:
        return (float(self.phi),)

    def autocov(self, h):
        return ar1_autocov(h, self)

    def as_dict(self) -> dict:
        return {"kind": "ar1", "phi": self.phi, "sigma2": self.sigma2}


def ar1_autocov(h, p: Ar1Params):
    lag = np.abs(np.atleast_1d(np.asarray(h)))
    if not abs(p.phi) < 1.0:
        raise NonstationaryError(f"AR(1) requires |phi| < 1, got {p.phi!r}")
    out = p.sigma2 / (1.0 - p.phi ** 2) * np.power(float(p.phi), lag.astype(float))
    return _as_result(out, h)


def ar_coeffs_from_roots(xi1: complex, xi2: complex) -> tuple[float, float]:
    """(a, b) of phi(z) = 1 - a z - b z^2 whose roots are xi1, xi2."""
    xi1, xi2 = complex(xi1), complex(xi2)
    if not (cmath.isfinite(xi1) and cmath.isfinite(xi2)):
        raise OrderDegeneracyError("an infinite root means b = 0: the AR(2) is an AR(1)")
    prod = xi1 * xi2
    if prod == 0:
        raise ParameterDomainError("phi(0) = 1, so zero is never a root")
    a = (xi1 + xi2) / prod
    b = -1.0 / prod
    if abs(a.imag) > IMAG_TOLERANCE * max(1.0, abs(a.real)) or \
            abs(b.imag) > IMAG_TOLERANCE * max(1.0, abs(b.real)):
        raise ParameterDomainError("roots must be real or a conjugate pair")
    if b.real == 0:
        raise OrderDegeneracyError("b = 0: the AR(2) is an AR(1)")
    return float(a.real), float(b.real)


def ar_roots_from_coeffs(a: float, b: float) -> tuple[complex, complex]:
    """Roots of 1 - a z - b z^2, ordered as (a + sqrt(a^2+4b)) / (-2b), (a - sqrt(a^2+4b)) / (-2b)."""
    if b == 0:
        raise OrderDegeneracyError("b = 0: the AR(2) is an AR(1)")
    disc = cmath.sqrt(a * a + 4.0 * b)
    return (a + disc) / (-2.0 * b), (a - disc) / (-2.0 * b)


@dataclass(frozen=True)
class Ar2Params:
    xi1: complex
    xi2: complex
    sigma2: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "xi1", complex(self.xi1))
        object.__setattr__(self, "xi2", complex(self.xi2))
        _check_ar2_roots(self.xi1, self.xi2)
        if not self.sigma2 > 0:
            raise ParameterDomainError(f"innovation variance must be > 0, got {self.sigma2!r}")

    @classmethod
    def from_coeffs(cls, a: float, b: float, sigma2: float = 1.0) -> "Ar2Params":
        xi1, xi2 = ar_roots_from_coeffs(a, b)
        return cls(xi1=xi1, xi2=xi2, sigma2=sigma2)

    @classmethod
    def normalized(cls, xi1: complex, xi2: complex) -> "Ar2Params":
        """sigma2 solved from c(0) = 1."""
        unit = cls(xi1=xi1, xi2=xi2, sigma2=1.0)
        return cls(xi1=xi1, xi2=xi2, sigma2=1.0 / ar2_autocov(0, unit))

    @property
    def coeffs(self) -> tuple[float, float]:
        return ar_coeffs_from_roots(self.xi1, self.xi2)

    def autocov(self, h):
        return ar2_autocov(h, self)

    def as_dict(self) -> dict:
        a, b = self.coeffs
        return {"kind": "ar2", "a": a, "b": b, "sigma2": self.sigma2,
                "xi1": [self.xi1.real, self.xi1.imag], "xi2": [self.xi2.real, self.xi2.imag]}


def _check_ar2_roots(xi1: complex, xi2: complex):
    if abs(xi1) <= 1.0 or abs(xi2) <= 1.0:
        raise NonstationaryError(f"AR(2) roots must lie outside the unit circle: |xi| = {abs(xi1):.6g}, {abs(xi2):.6g}")
    if abs(xi1 - xi2) <= 1e-12 * max(abs(xi1), abs(xi2)):
        raise DegenerateRootError(f"repeated AR(2) root {xi1!r}")
    both_real = xi1.imag == 0 and xi2.imag == 0
    conjugate = abs(xi1 - xi2.conjugate()) <= 1e-12 * abs(xi1)
    if not (both_real or conjugate):
        raise ParameterDomainError("AR(2) roots must be real or a conjugate pair")


def ar2_autocov(h, p: Ar2Params):
    lag = np.abs(np.atleast_1d(np.asarray(h))).astype(float)
    x1, x2 = p.xi1, p.xi2
    _check_ar2_roots(x1, x2)
    scale = p.sigma2 * x1 ** 2 * x2 ** 2 / ((x1 * x2 - 1.0) * (x2 - x1))
    values = scale * (np.power(x1, 1.0 - lag) / (x1 ** 2 - 1.0)
                      - np.power(x2, 1.0 - lag) / (x2 ** 2 - 1.0))
    residue = np.max(np.abs(values.imag))
    if residue > IMAG_TOLERANCE * max(1.0, float(np.max(np.abs(values.real)))):
        raise ParameterDomainError(f"AR(2) autocovariance has imaginary residue {residue:.3g}")
    return _as_result(values.real.copy(), h)


def check_causal(coeffs) -> np.ndarray:
    """Roots of 1 - phi_1 z - ... - phi_P z^P; raises unless all lie outside the unit disk."""
    phi = np.asarray(coeffs, dtype=float)
    roots = np.roots(np.concatenate([-phi[::-1], [1.0]]))
    if roots.size and np.min(np.abs(roots)) <= 1.0:
        raise NonstationaryError(f"AR coefficients {tuple(phi)} are not causal "
                                 f"(min |root| = {np.min(np.abs(roots)):.6g})")
    return roots


def ar_spectral_density(lam, coeffs, sigma2: float = 1.0):
    """g(lam) = sigma2 / (2 pi) / |phi(exp(-i lam))|^2."""
    phi = np.asarray(coeffs, dtype=float)
    check_causal(phi)
    freq = np.atleast_1d(np.asarray(lam, dtype=float))
    k = np.arange(1, phi.size + 1)
    transfer = 1.0 - np.sum(phi * np.exp(-1j * freq[..., None] * k), axis=-1)
    return _as_result(sigma2 / TWO_PI / np.abs(transfer) ** 2, lam)


# ---------------------------- Models ---------------------------- #

@dataclass(frozen=True)
class Matern1D:
    params: MaternParams

    def autocov(self, h):
        return matern_cov(h, self.params)

    def as_dict(self) -> dict:
        return self.params.as_dict()


Kernel1D = Union[Matern1D, Ar1Params, Ar2Params]


@dataclass(frozen=True)
class IsotropicMatern:
    params: MaternParams

    separable = False

    def cov(self, h1, h2):
        return matern_cov(np.hypot(np.asarray(h1, dtype=float), np.asarray(h2, dtype=float)), self.params)

    def as_dict(self) -> dict:
        return {"variant": "isotropic", "kernel": self.params.as_dict()}


@dataclass(frozen=True)
class Product:
    axis1: Kernel1D
    axis2: Kernel1D

    separable = True

    def cov(self, h1, h2):
        return np.asarray(self.axis1.autocov(h1)) * np.asarray(self.axis2.autocov(h2))

    def as_dict(self) -> dict:
        return {"variant": "product", "axis1": self.axis1.as_dict(), "axis2": self.axis2.as_dict()}


CovarianceModel = Union[IsotropicMatern, Product]


# ---------------------------- Aliased spectral density ---------------------------- #

def truncation_for(model: CovarianceModel, tol: float = TAIL_TOLERANCE,
                   cap: int = MAX_TRUNCATION) -> int:
    """Smallest H with |g(h,0)| + |g(0,h)| < tol for every h >= H, searched up to cap."""
    lags = np.arange(cap + 1)
    tail = np.abs(model.cov(lags, 0)) + np.abs(model.cov(0, lags))
    # running maximum from the far end, so oscillating kernels are not cut at a zero crossing
    suffix = np.maximum.accumulate(tail[::-1])[::-1]
    ok = np.nonzero(suffix[1:] < tol)[0]
    if ok.size == 0:
        raise TruncationError(f"covariance tail still above {tol:g} at H = {cap}")
    return int(ok[0] + 1)


def _folded_axis(lam: np.ndarray, kernel: Kernel1D, lags: np.ndarray) -> np.ndarray:
    gam = np.asarray(kernel.autocov(lags), dtype=float)
    return np.cos(np.multiply.outer(lam, lags)) @ gam / TWO_PI


def lattice_spectral_density(lambda1, lambda2, model: CovarianceModel, truncation: int | None = None):
    """
    Folded spectral density of the lattice-sampled process,
    (2 pi)^-2 * sum_{|h1|,|h2| <= H} g(h1,h2) exp(-i (h1 l1 + h2 l2)).

    H is chosen by truncation_for() when truncation is None.
    """
    H = truncation_for(model) if truncation is None else int(truncation)
    if H < 1:
        raise ParameterDomainError(f"truncation must be >= 1, got {H}")
    l1, l2 = np.broadcast_arrays(np.asarray(lambda1, dtype=float), np.asarray(lambda2, dtype=float))
    flat1, flat2 = l1.ravel(), l2.ravel()
    lags = np.arange(-H, H + 1)

    if isinstance(model, Product):
        dens = _folded_axis(flat1, model.axis1, lags) * _folded_axis(flat2, model.axis2, lags)
    else:
        grid = np.asarray(model.cov(lags[:, None], lags[None, :]), dtype=float)
        phase1 = np.multiply.outer(flat1, lags)
        phase2 = np.multiply.outer(flat2, lags)
        # cos(a + b) = cos a cos b - sin a sin b, summed against the lag table
        dens = (np.sum((np.cos(phase1) @ grid) * np.cos(phase2), axis=1)
                - np.sum((np.sin(phase1) @ grid) * np.sin(phase2), axis=1)) / TWO_PI ** 2

    if np.any(dens <= 0):
        raise TruncationError(f"aliased density not positive at H = {H}; raise the truncation")
    return _as_result(dens.reshape(l1.shape), l1)


class LatticeSpectrum:
    """Spectral density evaluator for a true model, truncation fixed on construction."""

    def __init__(self, model: CovarianceModel, truncation: int | None = None):
        self._model = model
        self._truncation = truncation_for(model) if truncation is None else int(truncation)

    @property
    def model(self) -> CovarianceModel:
        return self._model

    @property
    def truncation(self) -> int:
        return self._truncation

    def __call__(self, lambda1, lambda2):
        return lattice_spectral_density(lambda1, lambda2, self._model, self._truncation)


# ---------------------------- Models used in the experiments ---------------------------- #

AR2_ROOTS = ((2.0 / 3.0) * (1.0 + math.sqrt(3.0) * 1j), (2.0 / 3.0) * (1.0 - math.sqrt(3.0) * 1j))


def _experiment_models() -> dict[str, CovarianceModel]:
    matern2 = MaternParams(nu=2.0, rho=3.0, sigma2=1.0)
    matern1 = MaternParams(nu=1.0, rho=3.0, sigma2=1.0)
    ar2 = Ar2Params.normalized(*AR2_ROOTS)
    return {
        "matern2": IsotropicMatern(matern2),
        "matern1": IsotropicMatern(matern1),
        "matern2xmatern1": Product(Matern1D(matern2), Matern1D(matern1)),
        "matern1xar2": Product(Matern1D(matern1), ar2),
        "ar1xar2": Product(Ar1Params.normalized(0.5), ar2),
        "ar1xar1": Product(Ar1Params.normalized(0.9), Ar1Params.normalized(0.9)),
    }


EXPERIMENT_MODELS: dict[str, CovarianceModel] = _experiment_models()

# Error fields with a unilateral (quarter-plane) MA representation
UNILATERAL_MODELS = frozenset({"matern2xmatern1", "ar1xar2", "ar1xar1"})


def model_from_id(model_id: str) -> CovarianceModel:
    try:
        return EXPERIMENT_MODELS[model_id]
    except KeyError:
        raise ConfigError(f"unknown model {model_id!r}; choose from {sorted(EXPERIMENT_MODELS)}") from None
