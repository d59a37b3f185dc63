"""Monte Carlo coverage of confidence intervals and side-by-side method runs.

Each coverage trial draws fresh two-scale data on its own stream
``(master_seed, trial)``, fits, builds an interval and records whether it
contains ``theta_star`` coordinate by coordinate.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import BasisSet, ConfidenceReport
from .estimators import GibbsModel, fit_fm_iid, fit_re_iid, fit_rer
from .exceptions import ArgumentError, CguqError, ExperimentError, ShortSeriesWarning
from .seeding import run_indexed, stream
from .twoscale import DEFAULT_EPS, TwoScaleParams, generate_paths, sample_iid
from .uq import (
    batch_means_sigma,
    bootstrap,
    bootstrap_percentile_ci,
    bootstrap_standard_ci,
    fisher_i1_ts,
    fisher_pair_fm,
    fisher_pair_iid,
    jackknife,
    sandwich_ci_iid,
    sandwich_ci_ts,
)

log = logging.getLogger(__name__)

ESTIMATORS = ("fm", "re", "rer")
CI_KINDS = ("asymptotic", "jackknife", "bootstrap-standard", "bootstrap-percentile")
MIN_TRIALS = 20
MAX_FAILED_TRIALS = 0.05


def default_theta_star(K=5):
    theta = np.zeros(K)
    theta[1] = -1.0
    return theta


@dataclass(frozen=True)
class CoverageResult:
    method: str
    n: int
    alpha: float
    trials: int
    per_param_coverage: np.ndarray
    mean_coverage: float
    n_failed: int = 0
    seed: Optional[int] = None

    def __post_init__(self):
        cov = np.array(self.per_param_coverage, dtype=float)
        if np.any((cov < 0) | (cov > 1)):
            raise ArgumentError("coverage values must lie in [0, 1]")
        cov.setflags(write=False)
        object.__setattr__(self, "per_param_coverage", cov)

    def binomial_halfwidth(self):
        """``3 sqrt(c(1-c)/trials)`` around the mean coverage."""
        c = self.mean_coverage
        return 3.0 * np.sqrt(c * (1.0 - c) / self.trials)

    def to_dict(self):
        return {
            "method": self.method,
            "n": self.n,
            "alpha": self.alpha,
            "trials": self.trials,
            "per_param_coverage": [float(v) for v in self.per_param_coverage],
            "mean_coverage": float(self.mean_coverage),
            "n_failed": self.n_failed,
            "seed": self.seed,
        }


def _fit_and_ci(estimator, ci, data, basis, alpha, B, seed, batch_size=None, model=None):
    """Return (ParamEstimate, ConfidenceReport) for one dataset."""
    if estimator == "fm":
        est = fit_fm_iid(data, basis)
        fit = lambda d: fit_fm_iid(d, basis)  # noqa: E731
    elif estimator == "re":
        model = model or GibbsModel(basis)
        est = fit_re_iid(data, basis, model=model)
        fit = lambda d: fit_re_iid(d, basis, model=model)  # noqa: E731
    elif estimator == "rer":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ShortSeriesWarning)
            est = fit_rer(data, basis)
        if ci != "asymptotic":
            raise ArgumentError("RER supports asymptotic intervals only (single dependent path)")
        i1 = fisher_i1_ts(est.theta, data, basis)
        sigma = batch_means_sigma(est.theta, data, basis, batch_size)
        return est, sandwich_ci_ts(est.theta, i1, sigma, data.n_states - 1, alpha)
    else:
        raise ArgumentError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")
    if not est.converged:
        raise CguqError(f"{est.method} did not converge")
    if ci == "asymptotic":
        fisher = fisher_pair_fm(est.theta, data, basis) if estimator == "fm" else fisher_pair_iid(est.theta, data, model)
        return est, sandwich_ci_iid(est.theta, fisher, len(data), alpha)
    if ci == "jackknife":
        return est, jackknife(data, fit, alpha, est.theta)[1]
    if ci in ("bootstrap-standard", "bootstrap-percentile"):
        reps = bootstrap(data, fit, B, seed)
        if ci == "bootstrap-standard":
            return est, bootstrap_standard_ci(est.theta, reps, alpha)
        return est, bootstrap_percentile_ci(reps, alpha, est.theta)
    raise ArgumentError(f"unknown CI method {ci!r}; choose from {CI_KINDS}")


def _trial_data(estimator, n, epsilon, seed, trial, n_t=None):
    rng = stream(seed, trial)
    if estimator == "rer":
        sub = int(rng.integers(0, 2 ** 63 - 1))
        return generate_paths(TwoScaleParams(epsilon=epsilon, seed=sub), 1, n if n_t is None else n_t)
    return sample_iid(TwoScaleParams(epsilon=epsilon), n, rng=rng)


def coverage_experiment(estimator: str = "fm", ci: str = "asymptotic", n: int = 500, alpha: float = 0.05,
                        trials: int = 200, theta_star=None, master_seed: int = 0, threads: int = 1,
                        K: int = 5, epsilon: float = DEFAULT_EPS, B: int = 200,
                        batch_size: Optional[int] = None) -> CoverageResult:
    """Empirical coverage of ``ci`` intervals around ``estimator`` fits.

    For ``rer`` the sample size ``n`` is the number of recorded states of
    one stationary path.

    Raises
    ------
    ArgumentError
        ``trials < 20`` or unknown method names.
    ExperimentError
        More than 5% of trials failed to fit.
    """
    if trials < MIN_TRIALS:
        raise ArgumentError(f"trials must be >= {MIN_TRIALS}")
    if estimator not in ESTIMATORS:
        raise ArgumentError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")
    if ci not in CI_KINDS:
        raise ArgumentError(f"unknown CI method {ci!r}; choose from {CI_KINDS}")
    basis = BasisSet.monomial(K)
    theta_star = default_theta_star(K) if theta_star is None else np.asarray(theta_star, dtype=float)
    if theta_star.size != K:
        raise ArgumentError("theta_star length must equal K")
    model = GibbsModel(basis) if estimator == "re" else None

    def trial(t):
        data = _trial_data(estimator, n, epsilon, master_seed, t)
        try:
            _, rep = _fit_and_ci(estimator, ci, data, basis, alpha, B, int(stream(master_seed, t, 1).integers(2 ** 62)),
                                 batch_size, model)
        except (CguqError, np.linalg.LinAlgError) as exc:
            log.debug("trial %d failed: %s", t, exc)
            return None
        return rep.contains(theta_star)

    hits = run_indexed(trial, trials, threads)
    ok = [h for h in hits if h is not None]
    n_failed = trials - len(ok)
    if n_failed > MAX_FAILED_TRIALS * trials:
        raise ExperimentError(f"{n_failed} of {trials} trials failed")
    per = np.mean(np.vstack(ok), axis=0)
    return CoverageResult(f"{estimator}/{ci}", n, alpha, trials, per, float(per.mean()), n_failed, master_seed)


def method_comparison(config: dict) -> list:
    """Fit FM, RE and RER on matched budgets and tabulate estimates with asymptotic CIs.

    Recognised keys: ``seed`` (required), ``methods`` (default all three),
    ``n`` (i.i.d. samples, 500), ``n_t`` (path length, 50000), ``K`` (5),
    ``epsilon``, ``alpha`` (0.05), ``theta_star``.

    Each row holds method, theta, variance, lower, upper, wall_time (fit only,
    seconds) and contains (per-coordinate containment of ``theta_star``).
    """
    if not config:
        raise ArgumentError("empty comparison config")
    if "seed" not in config:
        raise ArgumentError("comparison config needs a seed")
    seed = int(config["seed"])
    methods = list(config.get("methods", ESTIMATORS))
    unknown = [m for m in methods if m not in ESTIMATORS]
    if unknown or not methods:
        raise ArgumentError(f"unknown or empty methods {unknown}")
    K = int(config.get("K", 5))
    eps = float(config.get("epsilon", DEFAULT_EPS))
    alpha = float(config.get("alpha", 0.05))
    n = int(config.get("n", 500))
    n_t = int(config.get("n_t", 50000))
    basis = BasisSet.monomial(K)
    theta_star = np.asarray(config.get("theta_star", default_theta_star(K)), dtype=float)
    iid = sample_iid(TwoScaleParams(epsilon=eps, seed=seed), n) if {"fm", "re"} & set(methods) else None
    path = generate_paths(TwoScaleParams(epsilon=eps, seed=seed), 1, n_t) if "rer" in methods else None
    rows = []
    for m in methods:
        data = path if m == "rer" else iid
        t0 = time.perf_counter()
        est, rep = _fit_and_ci(m, "asymptotic", data, basis, alpha, 0, seed)
        wall = time.perf_counter() - t0
        rows.append({
            "method": est.method,
            "theta": est.theta.tolist(),
            "variance": rep.variance.tolist(),
            "lower": rep.lower.tolist(),
            "upper": rep.upper.tolist(),
            "wall_time": wall,
            "contains": rep.contains(theta_star).tolist(),
        })
    return rows


def fit_with_ci(estimator: str, ci: str, data, basis: BasisSet, alpha: float = 0.05, B: int = 200, seed: int = 0,
                batch_size: Optional[int] = None):
    """Public wrapper: fit ``estimator`` on ``data`` and return ``(ParamEstimate, ConfidenceReport)``."""
    return _fit_and_ci(estimator, ci, data, basis, alpha, B, seed, batch_size)


__all__ = [
    "CoverageResult",
    "ConfidenceReport",
    "coverage_experiment",
    "default_theta_star",
    "fit_with_ci",
    "method_comparison",
]
