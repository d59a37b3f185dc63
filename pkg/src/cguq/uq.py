"""Confidence intervals for fitted CG parameters and derived quantities.

Asymptotic (sandwich) intervals::

    theta_hat_k +/- z_{alpha/2} sqrt([F1^-1 F2 F1^-T]_kk / N)

with F1 the mean negative Hessian and F2 the outer product of scores
(i.i.d. data), or the path-space analogue with a batch-means long-run
covariance of the transition scores. Non-asymptotic intervals come from
the jackknife and the bootstrap over whole resampling units (rows,
paths or configurations).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm

from .core import (
    BasisSet,
    CgMap,
    ConfidenceReport,
    IidDataset,
    ParamEstimate,
    TimeSeriesDataset,
    as_cg_scalar,
    design_matrix,
)
from .estimators import GibbsModel, check_conditioning, transitions
from .exceptions import ArgumentError, CguqError, ResamplingError
from .seeding import run_indexed, stream

log = logging.getLogger(__name__)

DEFAULT_B = 200
MAX_FAILED_FRACTION = 0.10


def z_quantile(alpha):
    """Two-sided standard-normal critical value ``z_{alpha/2}``."""
    if not 0.0 < alpha <= 1.0:
        raise ArgumentError("alpha must lie in (0, 1]")
    return float(norm.ppf(1.0 - alpha / 2.0))


# ---------------------------------------------------------------------------
# Fisher information


@dataclass(frozen=True)
class FisherPair:
    f1: np.ndarray
    f2: np.ndarray
    kind: str = "iid"

    def __post_init__(self):
        if self.kind not in ("iid", "path-space"):
            raise ArgumentError(f"unknown Fisher kind {self.kind!r}")
        for name in ("f1", "f2"):
            m = np.array(getattr(self, name), dtype=float)
            m = 0.5 * (m + m.T)
            m.setflags(write=False)
            object.__setattr__(self, name, m)


def _cg_x(data, cg_map):
    if isinstance(data, np.ndarray):
        return np.asarray(data, dtype=float).ravel()
    return as_cg_scalar(data.states, cg_map)


def fisher_f1_iid(theta_hat, data, model: GibbsModel, cg_map: Optional[CgMap] = None) -> np.ndarray:
    """Mean negative Hessian of ``log mu_theta(X_i)``.

    For the Gibbs family the Hessian does not depend on the data point and
    equals ``4 Cov_theta(psi)``, computed by quadrature.
    """
    _, cov = model.moments(theta_hat)
    return 4.0 * cov


def iid_scores(theta_hat, data, model: GibbsModel, cg_map: Optional[CgMap] = None) -> np.ndarray:
    """Per-sample gradients ``-2 psi(X_i) + 2 E_theta[psi]``; shape (N, K)."""
    mean, _ = model.moments(theta_hat)
    return -2.0 * model.features(_cg_x(data, cg_map)) + 2.0 * mean[None, :]


def fisher_f2_iid(theta_hat, data, model: GibbsModel, cg_map: Optional[CgMap] = None) -> np.ndarray:
    g = iid_scores(theta_hat, data, model, cg_map)
    return g.T @ g / g.shape[0]


def fisher_pair_iid(theta_hat, data, model: GibbsModel, cg_map: Optional[CgMap] = None) -> FisherPair:
    return FisherPair(fisher_f1_iid(theta_hat, data, model, cg_map), fisher_f2_iid(theta_hat, data, model, cg_map))


def fisher_pair_fm(theta_hat, data: IidDataset, basis: BasisSet, cg_map: Optional[CgMap] = None) -> FisherPair:
    """Fisher pair of force matching read as Gaussian regression ``F_i ~ N(a(X_i; theta), 1)``.

    F1 is the mean outer product of the basis rows, F2 the residual-weighted
    one, so the sandwich is the heteroscedasticity-robust covariance.
    """
    if data.cg_forces is None:
        raise ArgumentError("force matching Fisher pair needs cg_forces")
    A = design_matrix(basis, _cg_x(data, cg_map))
    f = np.asarray(data.cg_forces, dtype=float)[:, 0]
    r = f - A @ np.asarray(theta_hat, dtype=float)
    n = A.shape[0]
    return FisherPair(A.T @ A / n, (A * (r * r)[:, None]).T @ A / n)


def transition_scores(theta_hat, data: TimeSeriesDataset, basis: BasisSet, cg_map: Optional[CgMap] = None):
    """Scores of the Euler-Maruyama log transition density, unit diffusion.

    ``log q = -|dX - a(X; theta) h|^2 / (2h)`` gives
    ``grad = (dX - a h) phi(X)``; rows follow path order.
    """
    x, dx, _ = transitions(data, cg_map)
    h = data.time_step
    A = design_matrix(basis, x)
    resid = dx - h * (A @ np.asarray(theta_hat, dtype=float))
    return resid[:, None] * A


def fisher_i1_ts(theta_hat, data: TimeSeriesDataset, basis: BasisSet, cg_map: Optional[CgMap] = None) -> np.ndarray:
    """Mean negative Hessian of the log transition density: ``h * mean(phi phi^T)``."""
    x, _, _ = transitions(data, cg_map)
    if x.size == 0:
        raise ArgumentError("no transitions")
    A = design_matrix(basis, x)
    return data.time_step * (A.T @ A) / A.shape[0]


def batch_means_cov(scores, batch_size: Optional[int] = None) -> np.ndarray:
    """Batch-means estimate of the long-run covariance of a score sequence.

    ``a = n // b`` full batches of length ``b`` (default ``floor(sqrt(n))``);
    trailing rows that do not fill a batch are dropped. Returns
    ``b/(a-1) * sum_j (Ybar_j - Ybar)(Ybar_j - Ybar)^T``.
    """
    y = np.asarray(scores, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    n = y.shape[0]
    b = int(np.floor(np.sqrt(n))) if batch_size is None else int(batch_size)
    if b < 1:
        raise ArgumentError("batch size must be >= 1")
    a = n // b
    if a < 2:
        raise ArgumentError(f"need at least 2 batches, got {a} (n={n}, b={b})")
    means = y[: a * b].reshape(a, b, -1).mean(axis=1)
    c = means - means.mean(axis=0)
    return b / (a - 1) * (c.T @ c)


def batch_means_sigma(theta_hat, data: TimeSeriesDataset, basis: BasisSet, batch_size: Optional[int] = None,
                      cg_map: Optional[CgMap] = None) -> np.ndarray:
    """Long-run covariance of the transition scores along one stationary path."""
    if data.n_paths != 1:
        raise ArgumentError("batch means needs exactly one stationary path")
    return batch_means_cov(transition_scores(theta_hat, data, basis, cg_map), batch_size)


def sandwich_cov(f1, f2, n) -> np.ndarray:
    """Covariance ``F1^-1 F2 F1^-T / n`` of the estimator."""
    f1 = np.asarray(f1, dtype=float)
    check_conditioning(f1, "Fisher matrix F1")
    inv = np.linalg.inv(f1)
    cov = inv @ np.asarray(f2, dtype=float) @ inv.T / n
    return 0.5 * (cov + cov.T)


def _symmetric_report(method, theta_hat, variance, alpha, grid=None):
    theta_hat = np.asarray(theta_hat, dtype=float)
    half = z_quantile(alpha) * np.sqrt(np.maximum(variance, 0.0))
    return ConfidenceReport(method, alpha, theta_hat, theta_hat - half, theta_hat + half, variance, grid)


def sandwich_ci_iid(theta_hat, fisher: FisherPair, n: int, alpha: float = 0.05) -> ConfidenceReport:
    """Asymptotic interval for i.i.d. estimators; ``variance`` holds the sandwich diagonal."""
    var = np.diag(sandwich_cov(fisher.f1, fisher.f2, n)).copy()
    return _symmetric_report("asymptotic", theta_hat, var, alpha)


def sandwich_ci_ts(theta_hat, i1, sigma_bm, n: int, alpha: float = 0.05) -> ConfidenceReport:
    """Asymptotic path-space interval; ``n`` is the number of transitions."""
    var = np.diag(sandwich_cov(i1, sigma_bm, n)).copy()
    return _symmetric_report("asymptotic", theta_hat, var, alpha)


def f1_f2_divergence(fisher: FisherPair) -> float:
    """Relative Frobenius distance ``|F1 - F2| / |F1|``; small values suggest a well-specified model."""
    return float(np.linalg.norm(fisher.f1 - fisher.f2) / np.linalg.norm(fisher.f1))


# ---------------------------------------------------------------------------
# Resampling


def _take(data, idx):
    if hasattr(data, "take") and not isinstance(data, np.ndarray):
        return data.take(idx)
    if isinstance(data, np.ndarray):
        return data[idx]
    return [data[i] for i in idx]


def _theta_of(result):
    if isinstance(result, ParamEstimate):
        if not result.converged:
            raise CguqError(f"{result.method} refit did not converge")
        return np.asarray(result.theta, dtype=float)
    return np.atleast_1d(np.asarray(result, dtype=float))


@dataclass(frozen=True)
class BootstrapReplicates:
    thetas: np.ndarray
    seed: int
    b_count: int
    n_failed: int = 0
    failed_indices: tuple = ()

    def __post_init__(self):
        t = np.atleast_2d(np.array(self.thetas, dtype=float))
        if t.shape[0] < 2:
            raise ArgumentError("need at least 2 successful replicates")
        t.setflags(write=False)
        object.__setattr__(self, "thetas", t)

    @property
    def variance(self):
        """Per-coordinate replicate variance with 1/B normalisation."""
        return self.thetas.var(axis=0)

    @property
    def std(self):
        return np.sqrt(self.variance)

    @property
    def mean(self):
        return self.thetas.mean(axis=0)


def jackknife_replicates(data, estimator: Callable, threads: int = 1) -> np.ndarray:
    """Leave-one-unit-out estimates, shape (N, K)."""
    n = len(data)
    if n < 2:
        raise ArgumentError("jackknife needs at least 2 resampling units")
    all_idx = np.arange(n)

    def refit(i):
        try:
            return _theta_of(estimator(_take(data, np.delete(all_idx, i))))
        except (CguqError, np.linalg.LinAlgError, FloatingPointError) as exc:
            return exc

    out = run_indexed(refit, n, threads)
    failed = [i for i, r in enumerate(out) if isinstance(r, Exception)]
    if failed:
        raise ResamplingError(f"jackknife refit failed for left-out unit(s) {failed[:20]}: {out[failed[0]]}")
    return np.vstack(out)


def jackknife_variance(loo) -> np.ndarray:
    loo = np.atleast_2d(np.asarray(loo, dtype=float))
    n = loo.shape[0]
    return (n - 1) / n * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0)


def jackknife(data, estimator: Callable, alpha: float = 0.05, theta_hat=None, threads: int = 1):
    """Jackknife variance and standard interval ``theta_hat +/- z sqrt(V_jack)``.

    Returns
    -------
    variance : ndarray
    report : ConfidenceReport
    """
    loo = jackknife_replicates(data, estimator, threads)
    var = jackknife_variance(loo)
    if theta_hat is None:
        theta_hat = _theta_of(estimator(data))
    return var, _symmetric_report("jackknife", theta_hat, var, alpha)


def bootstrap(data, estimator: Callable, B: int = DEFAULT_B, seed: int = 0, threads: int = 1) -> BootstrapReplicates:
    """Nonparametric bootstrap over resampling units.

    Replicate ``r`` resamples with the stream ``(seed, r)``. Failed refits are
    dropped up to 10% of ``B``; beyond that :class:`ResamplingError` is raised.
    """
    if B < 2:
        raise ArgumentError("B must be >= 2")
    n = len(data)
    if n < 1:
        raise ArgumentError("empty dataset")

    def replicate(r):
        idx = stream(seed, r).integers(0, n, size=n)
        try:
            return _theta_of(estimator(_take(data, idx)))
        except (CguqError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.debug("bootstrap replicate %d failed: %s", r, exc)
            return None

    out = run_indexed(replicate, B, threads)
    failed = tuple(i for i, r in enumerate(out) if r is None)
    if len(failed) > MAX_FAILED_FRACTION * B:
        raise ResamplingError(f"{len(failed)} of {B} bootstrap refits failed (limit {MAX_FAILED_FRACTION:.0%})")
    if failed:
        log.warning("dropped %d of %d failed bootstrap replicates", len(failed), B)
    thetas = np.vstack([r for r in out if r is not None])
    return BootstrapReplicates(thetas, seed, B, len(failed), failed)


def bootstrap_standard_ci(theta_hat, reps: BootstrapReplicates, alpha: float = 0.05) -> ConfidenceReport:
    return _symmetric_report("bootstrap-standard", theta_hat, reps.variance, alpha)


def percentile_bounds(values, alpha):
    """Empirical ``alpha/2`` and ``1 - alpha/2`` quantiles per column.

    Linear interpolation between order statistics at 1-based position
    ``(B - 1) p + 1``.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if not 0.0 < alpha <= 1.0:
        raise ArgumentError("alpha must lie in (0, 1]")
    lo = np.quantile(values, alpha / 2.0, axis=0, method="linear")
    hi = np.quantile(values, 1.0 - alpha / 2.0, axis=0, method="linear")
    return lo, hi


def bootstrap_percentile_ci(reps, alpha: float = 0.05, theta_hat=None) -> ConfidenceReport:
    """Percentile interval read directly off the replicate distribution.

    ``reps`` may be a :class:`BootstrapReplicates` or a (B, K) array.
    ``estimate`` defaults to the replicate median.
    """
    values = reps.thetas if isinstance(reps, BootstrapReplicates) else np.atleast_2d(np.asarray(reps, dtype=float))
    if values.shape[0] == 1 and values.shape[1] > 1 and not isinstance(reps, BootstrapReplicates):
        values = values.T
    lo, hi = percentile_bounds(values, alpha)
    est = np.median(values, axis=0) if theta_hat is None else np.asarray(theta_hat, dtype=float)
    return ConfidenceReport("bootstrap-percentile", alpha, est, lo, hi)


def delta_method_cov(fisher: FisherPair, n: int, inverse_information: bool = False) -> np.ndarray:
    """Parameter covariance fed to the delta method.

    Default: the sandwich ``F1^-1 F2 F1^-T / n``. With ``inverse_information`` the
    inverse information ``F1^-1 / n`` is used instead, which drops the
    misspecification correction.
    """
    if inverse_information:
        check_conditioning(fisher.f1, "Fisher matrix F1")
        return np.linalg.inv(fisher.f1) / n
    return sandwich_cov(fisher.f1, fisher.f2, n)


def delta_method_se(theta_hat, grad_g, cov_theta=None, *, fisher: Optional[FisherPair] = None,
                    n: Optional[int] = None, inverse_information: bool = False) -> float:
    """First-order standard error ``sqrt(grad^T cov grad)`` of ``g(theta_hat)``.

    Pass ``cov_theta`` directly, or ``fisher`` and ``n`` to use
    :func:`delta_method_cov`.
    """
    g = np.asarray(grad_g, dtype=float).ravel()
    if cov_theta is None:
        if fisher is None or n is None:
            raise ArgumentError("give cov_theta, or fisher and n")
        cov_theta = delta_method_cov(fisher, n, inverse_information)
    cov = np.atleast_2d(np.asarray(cov_theta, dtype=float))
    if cov.shape != (g.size, g.size):
        raise ArgumentError("gradient and covariance sizes differ")
    return float(np.sqrt(max(g @ cov @ g, 0.0)))


def qoi_bootstrap_ci(reps, g: Callable, alpha: float = 0.05, grid=None, theta_hat=None) -> ConfidenceReport:
    """Percentile band for a quantity of interest ``g(theta)``.

    ``g`` maps one parameter vector to a vector (e.g. values on ``grid``);
    it is applied to every replicate and the band is taken pointwise.
    ``estimate`` is ``g(theta_hat)`` when given, else the replicate median.
    """
    values = reps.thetas if isinstance(reps, BootstrapReplicates) else np.atleast_2d(np.asarray(reps, dtype=float))
    tau = np.vstack([np.atleast_1d(g(th)) for th in values])
    lo, hi = percentile_bounds(tau, alpha)
    est = np.median(tau, axis=0) if theta_hat is None else np.atleast_1d(g(np.asarray(theta_hat, dtype=float)))
    return ConfidenceReport("bootstrap-percentile", alpha, est, lo, hi, None, grid)


def rstd(theta_hat, sigma) -> np.ndarray:
    """Signed relative standard deviation ``sigma_k / theta_k``; NaN where ``|theta_k| < 1e-12``."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    out = np.full(theta_hat.shape, np.nan)
    ok = np.abs(theta_hat) >= 1e-12
    out[ok] = sigma[ok] / theta_hat[ok]
    return out
