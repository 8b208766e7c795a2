"""
Separable AR fits from LSE residuals by lag-moment matching.

Axis 1 uses the lags gamma^(k, 0), axis 2 the lags gamma^(0, k). An AR(1)
axis takes phi = rho(1); an AR(2) axis solves its 2 x 2 Yule-Walker system
in (a, b). The product scale is sigma12^2 = gamma^(0, 0) / gamma'(0, 0), with
gamma' the unit-innovation autocovariance of the fitted axes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from design import LatticeDesign, lag_slices
from errors import (ConfigError, DegenerateRootError, NonstationaryError, NonstationaryFitError,
                    OrderDegeneracyError, ParameterDomainError)
from estimators import ArAxis, SeparableARModel

LOGGER = logging.getLogger(__name__)

APPROXIMATIONS: dict[str, tuple[int, int]] = {
    "ar1xar1": (1, 1),
    "ar1xar2": (1, 2),
    "ar2xar2": (2, 2),
}

# a replicate whose fit raises one of these is excluded and counted
FIT_ERRORS = (NonstationaryFitError, OrderDegeneracyError, DegenerateRootError)

# population moments of an AR(1) axis give b = 0 up to rounding
ZERO_B_TOLERANCE = 1e-12


def approximation_orders(name: str) -> tuple[int, int]:
    try:
        return APPROXIMATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown approximation {name!r}; choose from {sorted(APPROXIMATIONS)}") from None


def residuals(design, y, beta_lse) -> np.ndarray:
    X = design.X if isinstance(design, LatticeDesign) else np.asarray(design, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.asarray(y, dtype=float) - X @ np.atleast_1d(np.asarray(beta_lse, dtype=float))


def _centered_grid(resid, N: int) -> np.ndarray:
    grid = np.reshape(np.asarray(resid, dtype=float), (N, N))
    return grid - grid.mean()


def lag_count(N: int, h1: int, h2: int) -> int:
    return (N - abs(h1)) * (N - abs(h2))


def _lag_moment(centered: np.ndarray, h1: int, h2: int) -> float:
    N = centered.shape[0]
    shifted, base = lag_slices(N, h1, h2)
    return float(np.sum(centered[shifted] * centered[base])) / lag_count(N, h1, h2)


def empirical_cov(resid, N: int, h1: int, h2: int) -> float:
    """gamma^(h1, h2): mean-corrected lag products averaged over the N(h) pairs on the lattice."""
    return _lag_moment(_centered_grid(resid, N), h1, h2)


@dataclass(frozen=True)
class EmpiricalCovEstimate:
    N: int
    mean: float
    table: dict[tuple[int, int], float] = field(default_factory=dict)
    counts: dict[tuple[int, int], int] = field(default_factory=dict)

    def __call__(self, h1: int, h2: int) -> float:
        return self.table[(h1, h2)]


def empirical_cov_table(resid, N: int, max_lag: int) -> EmpiricalCovEstimate:
    if max_lag >= N:
        raise ParameterDomainError(f"max_lag {max_lag} needs N > {max_lag}, got N = {N}")
    grid = np.reshape(np.asarray(resid, dtype=float), (N, N))
    centered = grid - grid.mean()
    lags = range(-max_lag, max_lag + 1)
    table = {(h1, h2): _lag_moment(centered, h1, h2) for h1 in lags for h2 in lags}
    counts = {h: lag_count(N, *h) for h in table}
    return EmpiricalCovEstimate(N=N, mean=float(grid.mean()), table=table, counts=counts)


# ---------------------------- Moment matching ---------------------------- #

def _yule_walker(rho1: float, rho2: float, order: int, allow_zero_b: bool = False) -> tuple[float, ...]:
    if order == 1:
        return (rho1,)
    denom = 1.0 - rho1 * rho1
    if denom <= 0:
        raise NonstationaryFitError(f"|rho(1)| = {abs(rho1):.6g} leaves the AR(2) system singular")
    a = rho1 * (1.0 - rho2) / denom
    b = (rho2 - rho1 * rho1) / denom
    if allow_zero_b and abs(b) < ZERO_B_TOLERANCE:
        # an AR(1) correlation sequence seen through AR(2) equations; g is still well defined
        return a, 0.0
    if b == 0:
        raise OrderDegeneracyError("fitted b = 0: the AR(2) axis is an AR(1)")
    return a, b


def _fit_axis(lag: Callable[[int], float], g00: float, order: int, allow_zero_b: bool = False) -> ArAxis:
    if order not in (1, 2):
        raise ParameterDomainError(f"AR order must be 1 or 2, got {order}")
    coeffs = _yule_walker(lag(1) / g00, lag(2) / g00 if order == 2 else 0.0, order, allow_zero_b)
    try:
        axis = ArAxis(coeffs)
        if order == 2:
            axis.kernel()
    except NonstationaryError as e:
        raise NonstationaryFitError(f"fitted AR{coeffs} is not causal: {e}") from e
    return axis


def fit_from_moments(cov: Callable[[int, int], float], orders: Sequence[int],
                     allow_zero_b: bool = False) -> SeparableARModel:
    """Separable fit from lag moments cov(h1, h2); b = 0 raises OrderDegeneracyError unless allowed."""
    P1, P2 = orders
    g00 = cov(0, 0)
    if not g00 > 0:
        raise NonstationaryFitError(f"lag-0 moment must be > 0, got {g00!r}")
    axis1 = _fit_axis(lambda k: cov(k, 0), g00, P1, allow_zero_b)
    axis2 = _fit_axis(lambda k: cov(0, k), g00, P2, allow_zero_b)
    sigma12 = g00 / (axis1.unit_variance() * axis2.unit_variance())
    return SeparableARModel(axis1, axis2, sigma12)


def fit_separable(resid, N: int, orders: Sequence[int]) -> SeparableARModel:
    centered = _centered_grid(resid, N)
    if N <= max(orders):
        raise ParameterDomainError(f"need N > {max(orders)} for lags up to the AR order, got N = {N}")
    return fit_from_moments(lambda h1, h2: _lag_moment(centered, h1, h2), orders)


def fit_separable_population(model, orders: Sequence[int]) -> SeparableARModel:
    """
    The N -> infinity limit of fit_separable: the same equations on the true autocovariance.

    An AR(1) axis fitted with order 2 keeps b = 0 instead of raising.
    """
    return fit_from_moments(lambda h1, h2: float(model.cov(h1, h2)), orders, allow_zero_b=True)


def average_fits(fits: Sequence[SeparableARModel]) -> SeparableARModel:
    """Componentwise mean of coefficients and sigma12^2; AR(2) roots follow from the mean (a, b)."""
    if not fits:
        raise ParameterDomainError("no fits to average")
    orders = {f.orders for f in fits}
    if len(orders) != 1:
        raise ParameterDomainError(f"cannot average fits of different orders {sorted(orders)}")
    axis1 = np.mean([f.axis1.coeffs for f in fits], axis=0)
    axis2 = np.mean([f.axis2.coeffs for f in fits], axis=0)
    sigma12 = float(np.mean([f.sigma12 for f in fits]))
    try:
        return SeparableARModel.from_coeffs(axis1, axis2, sigma12)
    except NonstationaryError as e:
        raise NonstationaryFitError(f"averaged fit is not causal: {e}") from e
