import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cguq.core import BasisSet, IidDataset, TimeSeriesDataset, eval_model
from cguq.estimators import GibbsModel, fit_fm_iid, re_objective
from cguq.exceptions import ArgumentError, ConditioningError, CguqError, ResamplingError
from cguq.twoscale import TwoScaleParams, generate_paths, sample_iid
from cguq.uq import (
    BootstrapReplicates,
    FisherPair,
    batch_means_cov,
    batch_means_sigma,
    bootstrap,
    bootstrap_percentile_ci,
    bootstrap_standard_ci,
    delta_method_cov,
    delta_method_se,
    f1_f2_divergence,
    fisher_f1_iid,
    fisher_f2_iid,
    fisher_i1_ts,
    fisher_pair_fm,
    fisher_pair_iid,
    jackknife,
    percentile_bounds,
    qoi_bootstrap_ci,
    rstd,
    sandwich_ci_iid,
    sandwich_ci_ts,
    sandwich_cov,
    transition_scores,
    z_quantile,
)

THETA_STAR = np.array([0.0, -1.0, 0.0, 0.0, 0.0])


def mean_estimator(d):
    return np.atleast_1d(np.mean(np.asarray(d, dtype=float), axis=0))


def ou_path(n, h, rng, x0=0.0):
    """Exact discretisation of dX = -X dt + dW (stationary variance 1/2)."""
    a = np.exp(-h)
    s = np.sqrt((1 - a * a) / 2)
    x = np.empty(n)
    x[0] = x0
    xi = rng.standard_normal(n)
    for i in range(1, n):
        x[i] = a * x[i - 1] + s * xi[i]
    return x


@pytest.fixture(scope="module")
def fm500():
    data = sample_iid(TwoScaleParams(seed=11), 500)
    return data, BasisSet.monomial(5)


# ---------------------------------------------------------------- z quantile


def test_z_quantile_values():
    assert z_quantile(0.05) == pytest.approx(1.959963984540054, abs=1e-12)
    assert z_quantile(0.32) == pytest.approx(0.994457883, abs=1e-8)
    assert z_quantile(1.0) == 0.0
    with pytest.raises(ArgumentError):
        z_quantile(0.0)


# -------------------------------------------------------------- Fisher F1/F2


def test_f1_gaussian_entry(mono5):
    model = GibbsModel(mono5)
    f1 = fisher_f1_iid(THETA_STAR, np.zeros(3), model)
    # psi_2 = -x^2/2 and x ~ N(0, 1/2): 4 Var(x^2/2) = 0.5
    assert f1[1, 1] == pytest.approx(0.5, abs=1e-8)
    assert np.allclose(f1, f1.T)
    assert np.linalg.eigvalsh(f1).min() > 0


def test_f1_constant_feature_gives_zero_row(mono5):
    model = GibbsModel(BasisSet.monomial(2), features=lambda x: np.column_stack([np.ones_like(x), x * x / 2]))
    f1 = fisher_f1_iid(np.array([0.3, 1.0]), np.zeros(2), model)
    assert np.allclose(f1[0], 0.0, atol=1e-14)
    assert np.allclose(f1[:, 0], 0.0, atol=1e-14)


def test_f1_matches_finite_difference_hessian(mono5, rng):
    model = GibbsModel(mono5)
    x = rng.normal(0, np.sqrt(0.5), 400)
    theta = np.array([0.02, -0.98, 0.03, -0.06, 0.0])
    f1 = fisher_f1_iid(theta, x, model)
    step = 1e-4
    K = theta.size
    hess = np.empty((K, K))
    E = np.eye(K) * step
    for i in range(K):
        for j in range(K):
            f = lambda d: re_objective(theta + d, x, model)  # noqa: E731
            hess[i, j] = (f(E[i] + E[j]) - f(E[i] - E[j]) - f(-E[i] + E[j]) + f(-E[i] - E[j])) / (4 * step * step)
    assert np.max(np.abs(f1 + hess)) < 1e-4


def test_f2_zero_at_model_mean():
    # theta = 0 gives the uniform window density, E[psi] = 0 = psi(0): every score vanishes
    model = GibbsModel(BasisSet.monomial(1))
    assert np.allclose(fisher_f2_iid(np.zeros(1), np.zeros(3), model), 0.0, atol=1e-24)


def test_f2_rank_bounded_by_n(mono5, rng):
    x = rng.normal(size=3)
    f2 = fisher_f2_iid(THETA_STAR, x, GibbsModel(mono5))
    assert np.linalg.matrix_rank(f2, tol=1e-10 * np.abs(f2).max()) <= 3
    assert np.linalg.eigvalsh(f2).min() > -1e-12


def test_fisher_pair_fm_linear_regression(rng):
    basis = BasisSet.monomial(2)
    x = rng.normal(size=2000)
    f = 0.5 - x + rng.normal(size=x.size)
    data = IidDataset(np.column_stack([x]), f[:, None])
    est = fit_fm_iid(data, basis)
    fp = fisher_pair_fm(est.theta, data, basis)
    A = np.column_stack([np.ones_like(x), x])
    assert np.allclose(fp.f1, A.T @ A / x.size)
    # homoscedastic unit noise: F2 close to F1
    assert f1_f2_divergence(fp) < 0.1


def test_fisher_pair_kind_validation():
    with pytest.raises(ArgumentError):
        FisherPair(np.eye(2), np.eye(2), kind="other")


# -------------------------------------------------------------- sandwich CI


def test_sandwich_identity_half_width():
    rep = sandwich_ci_iid(np.zeros(3), FisherPair(np.eye(3), np.eye(3)), 100, 0.05)
    assert np.allclose(rep.upper - rep.estimate, 0.1959963984540054, atol=1e-12)
    assert np.allclose(rep.variance, 0.01)
    rep1 = sandwich_ci_iid(np.zeros(3), FisherPair(np.eye(3), np.eye(3)), 100, 0.32)
    assert np.allclose(rep1.upper - rep1.estimate, np.sqrt(rep1.variance), rtol=0.01)


def test_sandwich_singular_f1():
    with pytest.raises(ConditioningError):
        sandwich_ci_iid(np.zeros(2), FisherPair(np.diag([1.0, 0.0]), np.eye(2)), 10)


def test_sandwich_collapse():
    rng = np.random.default_rng(4)
    M = rng.normal(size=(4, 4))
    f = M @ M.T + 4 * np.eye(4)
    cov = sandwich_cov(f, f, 37)
    assert np.allclose(np.diag(cov), np.diag(np.linalg.inv(f)) / 37, atol=1e-10)


def test_sandwich_ts_collapse_and_alpha_one():
    i1 = np.array([[2.0, 0.3], [0.3, 1.0]])
    theta = np.array([0.1, -1.0])
    rep = sandwich_ci_ts(theta, i1, i1, 999, 0.05)
    expect = 1.959963984540054 * np.sqrt(np.diag(np.linalg.inv(i1)) / 999)
    assert np.allclose(rep.upper - theta, expect, atol=1e-12)
    rep1 = sandwich_ci_ts(theta, i1, i1, 999, 1.0)
    assert np.allclose(rep1.lower, theta) and np.allclose(rep1.upper, theta)


# ------------------------------------------------------------ time series I1


def test_i1_constant_basis():
    data = TimeSeriesDataset((np.linspace(0, 1, 11),), 0.01)
    assert fisher_i1_ts([0.0], data, BasisSet.monomial(1))[0, 0] == pytest.approx(0.01)


def test_i1_ou_moments(rng):
    h = 0.01
    data = TimeSeriesDataset((ou_path(200_000, h, rng),), h, stationary=True)
    i1 = fisher_i1_ts(np.array([0.0, -1.0]), data, BasisSet.monomial(2))
    assert i1[0, 0] == pytest.approx(h, rel=1e-12)
    assert i1[1, 1] == pytest.approx(0.5 * h, rel=0.1)
    assert abs(i1[0, 1]) < 0.1 * h


def test_i1_matches_finite_difference(rng):
    h = 0.01
    basis = BasisSet.monomial(3)
    data = TimeSeriesDataset((ou_path(2000, h, rng),), h, stationary=True)
    x = data.paths[0][:, 0]
    dx = np.diff(x)
    A = np.column_stack([np.ones(x.size - 1), x[:-1], x[:-1] ** 2])

    def ell(th):
        return -np.mean((dx - h * A @ th) ** 2) / (2 * h)

    theta = np.array([0.05, -0.9, 0.01])
    i1 = fisher_i1_ts(theta, data, basis)
    s = 1e-3
    E = np.eye(3) * s
    hess = np.array([[(ell(theta + E[i] + E[j]) - ell(theta + E[i] - E[j]) - ell(theta - E[i] + E[j])
                       + ell(theta - E[i] - E[j])) / (4 * s * s) for j in range(3)] for i in range(3)])
    assert np.max(np.abs(i1 + hess)) < 1e-6


def test_transition_scores_shape(rng):
    data = TimeSeriesDataset((ou_path(50, 0.01, rng), ou_path(30, 0.01, rng)), 0.01)
    assert transition_scores(np.array([0.0, -1.0]), data, BasisSet.monomial(2)).shape == (78, 2)


# ---------------------------------------------------------------- batch means


def test_batch_means_ar1(rng):
    rho, n = 0.5, 100_000
    y = np.empty(n)
    y[0] = rng.normal() / np.sqrt(1 - rho**2)
    e = rng.normal(size=n)
    for i in range(1, n):
        y[i] = rho * y[i - 1] + e[i]
    sigma2 = 1.0 / (1 - rho**2)
    target = sigma2 * (1 + rho) / (1 - rho)
    est = batch_means_cov(y)[0, 0]
    assert abs(est / target - 1) < 0.3


def test_batch_means_iid(rng):
    y = rng.normal(size=(40_000, 2)) @ np.array([[1.0, 0.4], [0.0, 0.7]])
    bm = batch_means_cov(y)
    sc = np.cov(y.T)
    assert np.all(np.abs(np.diag(bm) / np.diag(sc) - 1) < 0.3)


def test_batch_means_constant_and_errors():
    assert np.allclose(batch_means_cov(np.ones((100, 3))), 0.0)
    with pytest.raises(ArgumentError):
        batch_means_cov(np.ones(10), batch_size=6)


def test_batch_means_sigma_single_path(rng):
    data = TimeSeriesDataset((ou_path(100, 0.01, rng), ou_path(100, 0.01, rng)), 0.01)
    with pytest.raises(ArgumentError):
        batch_means_sigma(np.zeros(2), data, BasisSet.monomial(2))


# ---------------------------------------------------------------- jackknife


def test_jackknife_mean_closed_form():
    var, rep = jackknife(np.array([1.0, 2.0, 3.0, 4.0, 5.0]), mean_estimator)
    assert var[0] == pytest.approx(0.5, abs=1e-14)
    assert rep.estimate[0] == pytest.approx(3.0)
    assert rep.method == "jackknife"


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(2, 12), elements=st.floats(-100, 100, allow_nan=False)))
def test_jackknife_of_mean_identity(x):
    var, _ = jackknife(x, mean_estimator)
    assert var[0] == pytest.approx(np.var(x, ddof=1) / x.size, rel=1e-9, abs=1e-9)


def test_jackknife_constant_estimator():
    var, _ = jackknife(np.arange(7.0), lambda d: np.array([3.0, -1.0]))
    assert np.all(var == 0.0)


def test_jackknife_reports_failing_unit():
    def est(d):
        if 2.0 not in d:
            raise CguqError("refit failed")
        return mean_estimator(d)

    with pytest.raises(ResamplingError, match=r"\[2\]"):
        jackknife(np.array([0.0, 1.0, 2.0, 3.0]), est)


def test_jackknife_threads_identical(fm500):
    data, basis = fm500
    est = lambda d: fit_fm_iid(d, basis)  # noqa: E731
    v1, _ = jackknife(data.take(np.arange(120)), est, threads=1)
    v2, _ = jackknife(data.take(np.arange(120)), est, threads=3)
    assert np.array_equal(v1, v2)


# ---------------------------------------------------------------- bootstrap


def test_bootstrap_identical_rows():
    reps = bootstrap(np.full((20, 2), 1.5), mean_estimator, B=50, seed=3)
    assert np.all(reps.variance == 0.0)
    rep = bootstrap_standard_ci(np.array([1.5, 1.5]), reps)
    assert np.all(rep.width == 0.0)


def test_bootstrap_mean_variance(rng):
    x = rng.normal(size=200)
    reps = bootstrap(x, mean_estimator, B=2000, seed=1)
    assert abs(reps.variance[0] / (np.var(x, ddof=1) / x.size) - 1) < 0.25


def test_bootstrap_deterministic_across_threads(fm500):
    data, basis = fm500
    est = lambda d: fit_fm_iid(d, basis)  # noqa: E731
    a = bootstrap(data, est, B=40, seed=9, threads=1)
    b = bootstrap(data, est, B=40, seed=9, threads=4)
    assert np.array_equal(a.thetas, b.thetas)
    c = bootstrap(data, est, B=40, seed=10)
    assert not np.array_equal(a.thetas, c.thetas)


def test_bootstrap_failure_budget():
    def flaky(d, frac):
        # fail whenever the resample's first value is below the quantile
        if d[0] < frac:
            raise CguqError("no convergence")
        return mean_estimator(d)

    x = np.linspace(0, 1, 101)
    reps = bootstrap(x, lambda d: flaky(d, 0.03), B=100, seed=0)
    assert reps.n_failed <= 10 and reps.thetas.shape[0] == 100 - reps.n_failed
    assert len(reps.failed_indices) == reps.n_failed
    with pytest.raises(ResamplingError):
        bootstrap(x, lambda d: flaky(d, 0.5), B=100, seed=0)


def test_bootstrap_standard_two_replicates():
    reps = BootstrapReplicates(np.array([[0.0], [2.0]]), 0, 2)
    rep = bootstrap_standard_ci(np.array([0.7]), reps)
    assert rep.variance[0] == pytest.approx(1.0)
    assert (rep.lower[0] + rep.upper[0]) / 2 == pytest.approx(0.7)


def test_percentile_oracle():
    rep = bootstrap_percentile_ci(np.arange(1.0, 101.0)[:, None], 0.05)
    assert rep.lower[0] == pytest.approx(3.475, abs=1e-12)
    assert rep.upper[0] == pytest.approx(97.525, abs=1e-12)
    med = bootstrap_percentile_ci(np.arange(1.0, 101.0)[:, None], 1.0)
    assert med.lower[0] == med.upper[0] == pytest.approx(50.5)


def test_percentile_symmetric_cloud_close_to_standard(rng):
    vals = rng.normal(2.0, 0.3, size=(20_000, 1))
    reps = BootstrapReplicates(vals, 0, vals.shape[0])
    p = bootstrap_percentile_ci(reps, 0.05, theta_hat=[2.0])
    s = bootstrap_standard_ci(np.array([2.0]), reps, 0.05)
    assert np.allclose([p.lower, p.upper], [s.lower, s.upper], atol=0.02)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 40), st.integers(1, 3)), elements=st.floats(-1e3, 1e3)),
       st.floats(0.001, 1.0))
def test_percentile_bounds_within_replicates(vals, alpha):
    lo, hi = percentile_bounds(vals, alpha)
    assert np.all(lo >= vals.min(axis=0) - 1e-9)
    assert np.all(hi <= vals.max(axis=0) + 1e-9)
    assert np.all(lo <= hi + 1e-9)


# ---------------------------------------------------------------- derived QoI


def test_delta_method_examples():
    cov = np.array([[0.04, 0.01], [0.01, 0.09]])
    assert delta_method_se([0.0, 0.0], [0.0, 1.0], cov) == pytest.approx(0.3)
    g = np.array([3.0, 4.0])
    assert delta_method_se([0.0, 0.0], g, np.eye(2) / 25) == pytest.approx(1.0)
    with pytest.raises(ArgumentError):
        delta_method_se([0.0], [1.0, 2.0], np.eye(1))


def test_delta_method_fisher_options():
    fp = FisherPair(np.diag([2.0, 4.0]), np.diag([8.0, 4.0]))
    sand = delta_method_se(None, [1.0, 0.0], fisher=fp, n=10)
    lit = delta_method_se(None, [1.0, 0.0], fisher=fp, n=10, inverse_information=True)
    assert sand == pytest.approx(np.sqrt(8.0 / 4.0 / 10))
    assert lit == pytest.approx(np.sqrt(0.5 / 10))
    assert np.allclose(delta_method_cov(fp, 10), np.diag([0.2, 0.025]))
    with pytest.raises(ArgumentError):
        delta_method_se(None, [1.0, 0.0])


def test_drift_band_and_delta_method(fm500):
    data, basis = fm500
    est = fit_fm_iid(data, basis)
    reps = bootstrap(data, lambda d: fit_fm_iid(d, basis), B=200, seed=5)
    grid = np.linspace(-2, 2, 41)
    band = qoi_bootstrap_ci(reps, lambda th: eval_model(basis, th, grid), 0.05, grid, est.theta)
    w = band.upper - band.lower
    centre = w[np.abs(grid) <= 0.5].mean()
    assert w[0] > centre and w[-1] > centre
    # delta method at x0 = 1 agrees with the bootstrap band half-width there
    fp = fisher_pair_fm(est.theta, data, basis)
    se = delta_method_se(est.theta, [1.0] * 5, fisher=fp, n=len(data))
    half = w[np.argmin(np.abs(grid - 1.0))] / 2
    assert se > 0
    assert 0.5 < 1.959963984540054 * se / half < 1.5


def test_qoi_identity_reduces_to_percentile(rng):
    vals = rng.normal(size=(300, 3))
    a = qoi_bootstrap_ci(vals, lambda th: th, 0.1)
    b = bootstrap_percentile_ci(vals, 0.1)
    assert np.array_equal(a.lower, b.lower) and np.array_equal(a.upper, b.upper)


def test_rstd():
    out = rstd([2.0, -2.0, 0.0], [1.0, 1.0, 1.0])
    assert out[0] == 0.5 and out[1] == -0.5 and np.isnan(out[2])


# ---------------------------------------------------------------- divergence


def test_divergence_equal_matrices():
    assert f1_f2_divergence(FisherPair(np.eye(3), np.eye(3))) == 0.0


def test_divergence_well_specified(mono5, rng):
    x = rng.normal(0, np.sqrt(0.5), 100_000)
    fp = fisher_pair_iid(THETA_STAR, x, GibbsModel(mono5))
    assert f1_f2_divergence(fp) < 0.1


def test_divergence_path_space_misspecified(rng):
    h, n = 0.01, 100_000
    basis = BasisSet.monomial(2)
    theta = np.array([0.0, -1.0])
    well = TimeSeriesDataset((ou_path(n, h, rng),), h, stationary=True)
    mis = generate_paths(TwoScaleParams(epsilon=0.5, h_fine=0.005, seed=2), 1, n, burn_in_time=10.0)

    def div(d):
        sig = batch_means_sigma(theta, d, basis)
        return f1_f2_divergence(FisherPair(fisher_i1_ts(theta, d, basis), sig, "path-space"))

    assert div(mis) > div(well)


# ---------------------------------------------------------------- invariants


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(-50, 50)), arrays(np.float64, 3, elements=st.floats(1e-6, 10)),
       st.integers(2, 10_000))
def test_symmetric_cis_centred_and_nested(theta, diag, n):
    fp = FisherPair(np.diag(diag), np.diag(diag))
    reps = [sandwich_ci_iid(theta, fp, n, a) for a in (0.01, 0.05, 0.32)]
    for r in reps:
        assert np.all(np.abs((r.lower + r.upper) / 2 - theta) <= 1e-12 * np.maximum(1, np.abs(theta)))
    for wide, narrow in zip(reps, reps[1:]):
        assert np.all(wide.lower <= narrow.lower) and np.all(wide.upper >= narrow.upper)
