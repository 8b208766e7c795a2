import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covariance import EXPERIMENT_MODELS, model_from_id
from design import LatticeDesign
from errors import (ConfigError, LagRangeError, NonstationaryFitError, OrderDegeneracyError,
                    ParameterDomainError)
from estimators import SeparableARModel, lse
from fit import (APPROXIMATIONS, approximation_orders, average_fits, empirical_cov, empirical_cov_table, fit_from_moments,
                 fit_separable, fit_separable_population, residuals)
from sampler import FieldSampler


class LagMoments:
    """Fixed lag moments with the cov(h1, h2) interface of a covariance model."""

    def __init__(self, values):
        self.values = values

    def cov(self, h1, h2):
        return self.values[(abs(h1), abs(h2))]


# ---------------------------- Residuals ---------------------------- #

def test_residuals():
    design = LatticeDesign.build(5, "poly")
    y = 3.0 * design.X[:, 0]
    np.testing.assert_allclose(residuals(design, y, [3.0]), 0.0, atol=1e-12)
    np.testing.assert_array_equal(residuals(design, y, [0.0]), y)


def test_residuals_orthogonal_to_design():
    rng = np.random.default_rng(0)
    design = LatticeDesign.from_matrix(6, rng.normal(size=(36, 2)))
    y = rng.normal(size=36)
    resid = residuals(design, y, lse(design, y))
    np.testing.assert_allclose(design.X.T @ resid, 0.0, atol=1e-10)


# ---------------------------- Empirical covariance ---------------------------- #

def test_constant_residuals_have_zero_covariance():
    for h in [(0, 0), (1, 2), (-3, 1)]:
        assert empirical_cov(np.full(25, 4.2), 5, *h) == pytest.approx(0.0, abs=1e-14)


def test_lag_zero_is_biased_variance():
    e = np.random.default_rng(1).normal(size=49)
    assert empirical_cov(e, 7, 0, 0) == pytest.approx(np.var(e), rel=1e-12)


def test_empirical_cov_brute_force():
    N = 4
    e = np.random.default_rng(2).normal(size=N * N)
    grid = e.reshape(N, N) - e.mean()
    for h1 in range(-3, 4):
        for h2 in range(-3, 4):
            pairs = [grid[t1 + h1, t2 + h2] * grid[t1, t2]
                     for t1 in range(N) for t2 in range(N)
                     if 0 <= t1 + h1 < N and 0 <= t2 + h2 < N]
            assert len(pairs) == (N - abs(h1)) * (N - abs(h2))
            assert empirical_cov(e, N, h1, h2) == pytest.approx(np.mean(pairs), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), h1=st.integers(-5, 5), h2=st.integers(-5, 5))
def test_empirical_cov_is_exactly_symmetric(seed, h1, h2):
    e = np.random.default_rng(seed).normal(size=36)
    assert empirical_cov(e, 6, h1, h2) == empirical_cov(e, 6, -h1, -h2)


def test_empirical_cov_lag_range():
    with pytest.raises(LagRangeError):
        empirical_cov(np.zeros(16), 4, 4, 0)


def test_empirical_cov_table():
    e = np.random.default_rng(3).normal(size=64)
    table = empirical_cov_table(e, 8, 2)
    assert len(table.table) == 25
    assert table.counts[(1, -2)] == 7 * 6
    assert table(1, -2) == table(-1, 2) == empirical_cov(e, 8, 1, -2)
    assert table.mean == pytest.approx(e.mean())
    with pytest.raises(ParameterDomainError):
        empirical_cov_table(e, 8, 8)


# ---------------------------- Separable fits ---------------------------- #

def test_population_fit_recovers_ar1_product():
    sep = fit_separable_population(model_from_id("ar1xar1"), (1, 1))
    assert sep.axis1.coeffs == pytest.approx((0.9,), abs=1e-12)
    assert sep.axis2.coeffs == pytest.approx((0.9,), abs=1e-12)
    assert sep.sigma12 == pytest.approx((1.0 - 0.81) ** 2, rel=1e-10)


def test_population_fit_recovers_ar2_axis():
    sep = fit_separable_population(model_from_id("ar1xar2"), (1, 2))
    assert sep.axis1.coeffs == pytest.approx((0.5,), abs=1e-10)
    assert sep.axis2.coeffs == pytest.approx((0.75, -0.5625), abs=1e-10)
    assert sep.variance() == pytest.approx(1.0, rel=1e-10)


def test_fit_moment_matching():
    model = model_from_id("matern1xar2")
    N = 30
    design = LatticeDesign.build(N, "harmonic")
    y = 2.0 * design.X[:, 0] + FieldSampler(model, N).draw(5).eps
    resid = residuals(design, y, lse(design, y))
    sep = fit_separable(resid, N, (2, 2))
    g00 = empirical_cov(resid, N, 0, 0)
    assert sep.variance() == pytest.approx(g00, rel=1e-12)
    a, b = sep.axis2.coeffs
    rho1 = empirical_cov(resid, N, 0, 1) / g00
    rho2 = empirical_cov(resid, N, 0, 2) / g00
    assert a / (1.0 - b) == pytest.approx(rho1, abs=1e-12)
    assert a * rho1 + b == pytest.approx(rho2, abs=1e-12)
    assert np.min(np.abs(sep.axis2.roots())) > 1


def test_ar1_sigma12_closed_form():
    e = np.random.default_rng(4).normal(size=100)
    sep = fit_separable(e, 10, (1, 1))
    phi1, phi2 = sep.axis1.coeffs[0], sep.axis2.coeffs[0]
    assert phi1 == pytest.approx(empirical_cov(e, 10, 1, 0) / empirical_cov(e, 10, 0, 0))
    assert sep.sigma12 == pytest.approx(empirical_cov(e, 10, 0, 0) * (1 - phi1 ** 2) * (1 - phi2 ** 2))


def test_white_noise_fit_is_flat():
    phis = []
    for seed in range(20):
        e = np.random.default_rng(seed).normal(size=900)
        phis.append(fit_separable(e, 30, (1, 1)).axis1.coeffs[0])
    assert abs(np.mean(phis)) < 0.05


def test_noncausal_fit_rejected():
    moments = LagMoments({(0, 0): 1.0, (1, 0): 0.3, (0, 1): 0.95, (0, 2): 0.4})
    with pytest.raises(NonstationaryFitError):
        fit_separable_population(moments, (1, 2))


def test_order_degeneracy_in_fit():
    moments = LagMoments({(0, 0): 1.0, (1, 0): 0.3, (0, 1): 0.5, (0, 2): 0.25})
    with pytest.raises(OrderDegeneracyError):
        fit_from_moments(moments.cov, (1, 2))
    # the population projection keeps b = 0 as an AR(2) axis
    sep = fit_separable_population(moments, (1, 2))
    assert sep.axis2.coeffs == pytest.approx((0.5, 0.0), abs=1e-12)
    assert sep.variance() == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("approx", sorted(APPROXIMATIONS))
@pytest.mark.parametrize("model_id", sorted(EXPERIMENT_MODELS))
def test_population_fit_for_every_model(model_id, approx):
    model = model_from_id(model_id)
    sep = fit_separable_population(model, approximation_orders(approx))
    assert sep.orders == approximation_orders(approx)
    assert sep.variance() == pytest.approx(float(model.cov(0, 0)), rel=1e-10)
    assert sep.max_inverse_root() < 1.0
    lam = np.linspace(-np.pi, np.pi, 9)
    assert np.all(sep.spectral_density(lam[:, None], lam[None, :]) > 0)


def test_population_fit_of_ar1_axis_as_ar2():
    sep = fit_separable_population(model_from_id("ar1xar1"), (2, 2))
    for axis in (sep.axis1, sep.axis2):
        assert axis.coeffs == pytest.approx((0.9, 0.0), abs=1e-10)
    np.testing.assert_allclose(sep.autocov(np.arange(4), 0), 0.9 ** np.arange(4), rtol=1e-10)


def test_zero_variance_fit_rejected():
    with pytest.raises(NonstationaryFitError):
        fit_separable(np.ones(36), 6, (1, 1))


def test_average_fits():
    fits = [SeparableARModel.from_coeffs((0.4,), (0.7, -0.5), 1.0),
            SeparableARModel.from_coeffs((0.6,), (0.8, -0.6), 2.0)]
    avg = average_fits(fits)
    assert avg.axis1.coeffs == pytest.approx((0.5,))
    assert avg.axis2.coeffs == pytest.approx((0.75, -0.55))
    assert avg.sigma12 == pytest.approx(1.5)
    with pytest.raises(ParameterDomainError):
        average_fits([])
    with pytest.raises(ParameterDomainError):
        average_fits([fits[0], SeparableARModel.from_coeffs((0.4,), (0.3,), 1.0)])


def test_approximation_orders():
    assert APPROXIMATIONS["ar1xar2"] == (1, 2)
    assert approximation_orders("ar2xar2") == (2, 2)
    with pytest.raises(ConfigError):
        approximation_orders("ar3xar3")


@pytest.mark.slow
def test_fit_consistency_on_ar1_field():
    N = 60
    design = LatticeDesign.build(N, "poly")
    sampler = FieldSampler(model_from_id("ar1xar1"), N)
    fits = []
    for seed in range(1000):
        y = 2.0 * design.X[:, 0] + sampler.draw(seed).eps
        fits.append(fit_separable(residuals(design, y, lse(design, y)), N, (1, 1)))
    avg = average_fits(fits)
    assert avg.axis1.coeffs[0] == pytest.approx(0.9, abs=0.05)
    assert avg.axis2.coeffs[0] == pytest.approx(0.9, abs=0.05)
