import itertools

import numpy as np
import pytest

from covariance import Ar1Params, Ar2Params, model_from_id
from design import LatticeDesign
from errors import (ConditioningWarning, IndefiniteCovarianceError, NonstationaryError, ParameterDomainError,
                    SingularDesignError)
from estimators import (ArAxis, DenseGls, PseudoBestEstimator, SeparableARModel, ar_precision_factor, glse, lse,
                        pbe, scaled_empirical_covariance, stationary_autocov)
from experiments import median_seconds
from sampler import FieldSampler, assemble_sigma, axis_covariance

AR2 = (0.75, -0.5625)


def random_design(rng, N, p=2):
    return LatticeDesign.from_matrix(N, rng.normal(size=(N * N, p)))


def random_axis(rng, order):
    if order == 1:
        return (rng.uniform(-0.8, 0.8),)
    while True:
        b, u = rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)
        a = u * (1.0 - b)
        if abs(b) > 0.05 and abs(a * a + 4.0 * b) > 1e-3:
            return a, b


def random_sep(rng, orders):
    return SeparableARModel.from_coeffs(random_axis(rng, orders[0]), random_axis(rng, orders[1]),
                                        rng.uniform(0.2, 3.0))


# ---------------------------- LSE / GLSE ---------------------------- #

def test_lse_noiseless():
    design = LatticeDesign.build(6, ["poly", "harmonic"])
    beta = np.array([2.0, -1.5])
    np.testing.assert_allclose(lse(design, design.X @ beta), beta, rtol=1e-10)


def test_lse_constant_regressor_is_mean():
    y = np.random.default_rng(1).normal(size=25)
    assert lse(LatticeDesign.from_matrix(5, np.ones(25)), y)[0] == pytest.approx(y.mean(), rel=1e-12)


def test_lse_matches_normal_equations():
    rng = np.random.default_rng(2)
    design = random_design(rng, 7, p=3)
    y = rng.normal(size=49)
    X = design.X
    np.testing.assert_allclose(lse(design, y), np.linalg.solve(X.T @ X, X.T @ y), rtol=1e-10)


def test_lse_rank_deficient():
    X = np.ones((16, 2))
    with pytest.raises(SingularDesignError):
        lse(LatticeDesign.from_matrix(4, X), np.zeros(16))


def test_glse_identity_is_lse():
    rng = np.random.default_rng(3)
    design = random_design(rng, 5)
    y = rng.normal(size=25)
    np.testing.assert_allclose(glse(design, y, np.eye(25)), lse(design, y), rtol=1e-10)


def test_glse_weighted_least_squares():
    rng = np.random.default_rng(4)
    design = random_design(rng, 5)
    y = rng.normal(size=25)
    w = rng.uniform(0.5, 2.0, size=25)
    X = design.X
    want = np.linalg.solve(X.T @ (X / w[:, None]), X.T @ (y / w))
    np.testing.assert_allclose(glse(design, y, np.diag(w)), want, rtol=1e-10)


def test_glse_noiseless_any_sigma():
    design = LatticeDesign.build(5, "polyharmonic")
    Sigma = assemble_sigma(model_from_id("matern1"), 5)
    assert glse(design, 2.0 * design.X[:, 0], Sigma)[0] == pytest.approx(2.0, rel=1e-10)


def test_glse_indefinite():
    design = LatticeDesign.build(2, "poly")
    with pytest.raises(IndefiniteCovarianceError):
        DenseGls(design, -np.eye(4))


# ---------------------------- Precision factor ---------------------------- #

def test_ar1_precision_factor():
    phi, sigma2, N = 0.6, 1.7, 50
    factor = ar_precision_factor((phi,), sigma2, N)
    assert factor.head[0, 0] == pytest.approx(np.sqrt(1.0 - phi ** 2))
    Q = factor.precision()
    tri = (np.diag(np.full(N, 1.0 + phi ** 2)) - phi * np.eye(N, k=1) - phi * np.eye(N, k=-1))
    tri[0, 0] = tri[-1, -1] = 1.0
    np.testing.assert_allclose(Q, tri / sigma2, atol=1e-12)
    Sigma = axis_covariance(Ar1Params(phi, sigma2), N)
    np.testing.assert_allclose(Q, np.linalg.inv(Sigma), atol=1e-8)


@pytest.mark.parametrize("coeffs", [(0.9,), AR2, (0.5,), (1.2, -0.5)])
def test_precision_factor_inverts_covariance(coeffs):
    N, sigma2 = 200, 0.8
    kernel = Ar1Params(coeffs[0], sigma2) if len(coeffs) == 1 else Ar2Params.from_coeffs(*coeffs, sigma2=sigma2)
    factor = ar_precision_factor(coeffs, sigma2, N)
    product = factor.precision() @ axis_covariance(kernel, N)
    assert np.max(np.abs(product - np.eye(N))) < 1e-8


def test_precision_factor_is_lower_banded():
    B = ar_precision_factor(AR2, 1.0, 12).matrix()
    np.testing.assert_array_equal(np.triu(B, k=1), 0.0)
    np.testing.assert_array_equal(np.tril(B, k=-3), 0.0)
    np.testing.assert_allclose(B[5, 3:6], [-AR2[1], -AR2[0], 1.0])


def test_white_noise_factor():
    factor = ar_precision_factor((0.0,), 2.0, 5)
    np.testing.assert_allclose(factor.matrix(), np.eye(5))
    np.testing.assert_allclose(factor.precision(), np.eye(5) / 2.0)


def test_precision_factor_errors():
    with pytest.raises(NonstationaryError):
        ar_precision_factor((1.1,), 1.0, 10)
    with pytest.raises(ParameterDomainError):
        ar_precision_factor(AR2, 1.0, 2)


def test_stationary_autocov_matches_kernel():
    gam = stationary_autocov(AR2, 1.3)
    kernel = Ar2Params.from_coeffs(*AR2, sigma2=1.3)
    np.testing.assert_allclose(gam, kernel.autocov(np.arange(2)), rtol=1e-12)


def test_apply_transpose_is_adjoint():
    factor = ar_precision_factor(AR2, 1.0, 9)
    U = np.random.default_rng(5).normal(size=(9, 4))
    np.testing.assert_allclose(factor.apply_transpose(U, axis=0), factor.matrix().T @ U, atol=1e-12)
    np.testing.assert_allclose(factor.apply(U.T, axis=1), (factor.matrix() @ U).T, atol=1e-12)


# ---------------------------- Separable model ---------------------------- #

def test_separable_model_basics():
    sep = SeparableARModel.from_coeffs((0.5,), AR2, 0.4)
    assert sep.orders == (1, 2)
    assert sep.variance() == pytest.approx(float(sep.autocov(0, 0)), rel=1e-12)
    assert float(sep.as_covariance_model().cov(2, 3)) == pytest.approx(float(sep.autocov(2, 3)), rel=1e-12)
    assert sep.max_inverse_root() == pytest.approx(0.75)
    assert sep.spectral_density(0.3, -1.0) == pytest.approx(sep.spectral_density(-0.3, 1.0))
    with pytest.raises(ParameterDomainError):
        SeparableARModel.from_coeffs((0.5,), (0.5,), 0.0)
    with pytest.raises(ParameterDomainError):
        ArAxis((0.1, 0.1, 0.1))


def test_kronecker_inverse_identity():
    rng = np.random.default_rng(6)
    for orders in itertools.product((1, 2), repeat=2):
        sep = random_sep(rng, orders)
        N = 8
        Sigma = assemble_sigma(sep.as_covariance_model(), N)
        S1 = axis_covariance(sep.as_covariance_model().axis1, N)
        S2 = axis_covariance(sep.as_covariance_model().axis2, N)
        np.testing.assert_allclose(np.linalg.inv(Sigma), np.kron(np.linalg.inv(S1), np.linalg.inv(S2)),
                                   rtol=1e-8, atol=1e-8)
        v = rng.normal(size=N * N)
        np.testing.assert_allclose(sep.precision_apply(v, N), np.linalg.solve(Sigma, v), rtol=1e-8, atol=1e-8)


# ---------------------------- PBE ---------------------------- #

def _check_pbe_oracle(rng, orders, N):
    sep = random_sep(rng, orders)
    design = random_design(rng, N)
    y = rng.normal(size=N * N)
    want = glse(design, y, assemble_sigma(sep.as_covariance_model(), N))
    np.testing.assert_allclose(pbe(design, y, sep), want, rtol=1e-8, atol=1e-12)


@pytest.mark.parametrize("orders", list(itertools.product((1, 2), repeat=2)))
@pytest.mark.parametrize("N", [6, 10, 14])
def test_pbe_equals_dense_glse(orders, N):
    rng = np.random.default_rng(10 * N + orders[0] * 2 + orders[1])
    for _ in range(5):
        _check_pbe_oracle(rng, orders, N)


@pytest.mark.slow
@pytest.mark.parametrize("orders", list(itertools.product((1, 2), repeat=2)))
@pytest.mark.parametrize("N", [6, 10, 14])
def test_pbe_equals_dense_glse_many(orders, N):
    rng = np.random.default_rng(1000 + 10 * N + orders[0] * 2 + orders[1])
    for _ in range(100):
        _check_pbe_oracle(rng, orders, N)


def test_pbe_white_noise_is_lse():
    rng = np.random.default_rng(7)
    design = random_design(rng, 6)
    y = rng.normal(size=36)
    sep = SeparableARModel.from_coeffs((0.0,), (0.0,), 1.0)
    np.testing.assert_allclose(pbe(design, y, sep), lse(design, y), rtol=1e-10)


def test_pbe_with_true_model_is_glse():
    model = model_from_id("ar1xar1")
    sep = SeparableARModel.from_coeffs((0.9,), (0.9,), (1.0 - 0.81) ** 2)
    N = 10
    design = LatticeDesign.build(N, "polyharmonic")
    gls = DenseGls(design, assemble_sigma(model, N))
    estimator = PseudoBestEstimator(design, sep)
    sampler = FieldSampler(model, N)
    for seed in range(5):
        y = 2.0 * design.X[:, 0] + sampler.draw(seed).eps
        np.testing.assert_allclose(estimator.estimate(y), gls.estimate(y), rtol=1e-8)


def test_pbe_conditioning_warning():
    design = LatticeDesign.build(6, "poly")
    sep = SeparableARModel.from_coeffs((0.9995,), (0.2,), 1.0)
    with pytest.warns(ConditioningWarning):
        PseudoBestEstimator(design, sep)


def test_pbe_too_small_grid():
    with pytest.raises(ParameterDomainError):
        PseudoBestEstimator(LatticeDesign.build(2, "poly"), SeparableARModel.from_coeffs(AR2, (0.1,), 1.0))


# ---------------------------- Scaled covariance ---------------------------- #

def test_scaled_covariance_basics():
    design = LatticeDesign.build(4, "poly")
    np.testing.assert_array_equal(scaled_empirical_covariance([[1.5]] * 5, design), [[0.0]])
    est = np.array([1.0, 2.0, 4.0])
    got = scaled_empirical_covariance(est[:, None], design)
    assert got[0, 0] == pytest.approx(design.norms[0] ** 2 * np.var(est, ddof=1))
    with pytest.raises(ParameterDomainError):
        scaled_empirical_covariance([[1.0]], design)


def test_scaled_lse_variance_matches_exact():
    model = model_from_id("ar1xar2")
    N, R = 20, 1000
    design = LatticeDesign.build(N, "poly")
    sampler = FieldSampler(model, N)
    x = design.X[:, 0]
    estimates = [lse(design, 2.0 * x + sampler.draw(500 + r).eps) for r in range(R)]
    got = scaled_empirical_covariance(estimates, design)[0, 0]
    Sigma = assemble_sigma(model, N)
    exact = design.norms[0] ** 2 * (x @ Sigma @ x) / (x @ x) ** 2
    assert got == pytest.approx(exact, rel=3.0 * np.sqrt(2.0 / (R - 1)))


def test_estimators_unbiased():
    model = model_from_id("matern1xar2")
    N, R = 10, 300
    design = LatticeDesign.build(N, "polyharmonic")
    sampler = FieldSampler(model, N)
    gls = DenseGls(design, assemble_sigma(model, N))
    pb = PseudoBestEstimator(design, SeparableARModel.from_coeffs((0.5,), AR2, 1.0))
    results = {"LSE": [], "GLSE": [], "PBE": []}
    for r in range(R):
        y = 2.0 * design.X[:, 0] + sampler.draw(r).eps
        results["LSE"].append(lse(design, y)[0])
        results["GLSE"].append(gls.estimate(y)[0])
        results["PBE"].append(pb.estimate(y)[0])
    for values in results.values():
        values = np.asarray(values)
        assert abs(values.mean() - 2.0) < 3.0 * values.std(ddof=1) / np.sqrt(R)



@pytest.mark.slow
def test_glse_grows_much_faster_than_pbe():
    model = model_from_id("ar1xar1")
    sep = SeparableARModel.from_coeffs((0.9,), (0.9,), (1.0 - 0.81) ** 2)
    seconds = {}
    for N in (50, 100):
        design = LatticeDesign.build(N, "polyharmonic")
        y = design.X[:, 0] + FieldSampler(model, N).draw(N).eps
        Sigma = assemble_sigma(model, N)
        seconds["glse", N] = median_seconds(lambda: glse(design, y, Sigma), 1)
        seconds["pbe", N] = median_seconds(lambda: pbe(design, y, sep), 5)
        del Sigma
    glse_growth = seconds["glse", 100] / seconds["glse", 50]
    pbe_growth = seconds["pbe", 100] / seconds["pbe", 50]
    # dense Cholesky is O(N^6), the banded whitening O(N^2)
    assert glse_growth / pbe_growth > 4.0
