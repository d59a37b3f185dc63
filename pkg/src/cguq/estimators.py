"""Parameter estimators for linear-in-theta CG models.

* force matching on i.i.d. samples and on pooled time series,
* relative entropy rate (one path) / path-space relative entropy (many paths),
  both closed-form least squares under the Euler-Maruyama transition density,
* equilibrium relative entropy, maximised by damped Newton-Raphson with all
  model expectations computed by 1-D quadrature.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (
    MONOMIAL,
    BasisSet,
    CgMap,
    IidDataset,
    ParamEstimate,
    TimeSeriesDataset,
    as_cg_scalar,
    design_matrix,
    potential_features,
)
from .exceptions import (
    ArgumentError,
    ConditioningError,
    IntegrabilityError,
    NewtonWarning,
    ShortSeriesWarning,
    UnsupportedBasisError,
)
from .twoscale import QUAD_HALF_WIDTH, QUAD_POINTS, default_grid, log_boltzmann_weights, trapezoid_weights

log = logging.getLogger(__name__)

SHORT_SERIES_TIME = 50.0
COND_RTOL = 1e-12


# ---------------------------------------------------------------------------
# Normal equations


@dataclass(frozen=True)
class LinearSystem:
    """Normal equations ``gram @ theta = moment`` of a least-squares problem."""

    gram: np.ndarray
    moment: np.ndarray
    n_rows: int

    def __post_init__(self):
        g = np.array(self.gram, dtype=float)
        m = np.array(self.moment, dtype=float).ravel()
        if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] != m.size:
            raise ArgumentError("gram must be K x K and moment length K")
        g = 0.5 * (g + g.T)
        g.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "gram", g)
        object.__setattr__(self, "moment", m)

    def __add__(self, other):
        n = self.n_rows + other.n_rows
        return LinearSystem(self.gram + other.gram, self.moment + other.moment, n)

    def scaled(self, c):
        return LinearSystem(self.gram * c, self.moment * c, self.n_rows)

    @classmethod
    def from_design(cls, A, b, weights=None):
        """Weighted normal equations ``A^T W A``, ``A^T W b`` (unweighted: divided by n)."""
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float).ravel()
        if weights is None:
            weights = np.full(A.shape[0], 1.0 / A.shape[0])
        Aw = A * weights[:, None]
        return cls(Aw.T @ A, Aw.T @ b, A.shape[0])


def check_conditioning(mat, what="Gram matrix", rtol=COND_RTOL):
    """Raise ConditioningError unless the symmetric ``mat`` is safely positive definite."""
    eig = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    top = eig[-1]
    if not top > 0 or eig[0] <= rtol * top:
        empty = [int(k) for k in np.nonzero(np.all(np.abs(mat) == 0, axis=0))[0]]
        msg = f"{what} is singular or ill-conditioned: smallest eigenvalue {eig[0]:.3e}, largest {top:.3e}"
        if empty:
            msg += f"; columns without data: {empty}"
        raise ConditioningError(msg, eigenvalues=eig, empty_columns=empty)
    return eig


def solve_normal_equations(system: LinearSystem) -> np.ndarray:
    """Solve ``gram @ theta = moment`` by Cholesky after a conditioning check."""
    from scipy.linalg import cho_factor, cho_solve

    check_conditioning(system.gram)
    theta = cho_solve(cho_factor(system.gram, lower=True), system.moment)
    # one step of iterative refinement keeps the residual at round-off level
    theta = theta + cho_solve(cho_factor(system.gram, lower=True), system.moment - system.gram @ theta)
    return theta


# ---------------------------------------------------------------------------
# Force matching


def _targets(forces):
    f = np.asarray(forces, dtype=float)
    if f.ndim == 2:
        if f.shape[1] != 1:
            raise ArgumentError("scalar basis needs one-dimensional CG forces")
        f = f[:, 0]
    return f


def fm_system(data: IidDataset, basis: BasisSet, cg_map: Optional[CgMap] = None) -> LinearSystem:
    if data.cg_forces is None:
        raise ArgumentError("force matching needs cg_forces")
    x = as_cg_scalar(data.states, cg_map)
    return LinearSystem.from_design(design_matrix(basis, x), _targets(data.cg_forces))


def fit_fm_iid(data: IidDataset, basis: BasisSet, cg_map: Optional[CgMap] = None, seed=None) -> ParamEstimate:
    """Least-squares fit of CG forces: ``min (1/N) sum |F_i - a(X_i; theta)|^2``."""
    theta = solve_normal_equations(fm_system(data, basis, cg_map))
    return ParamEstimate(theta, "fm-iid", len(data), seed, True, basis)


def _path_weights(lengths):
    """Per-row weights giving every path equal total weight ``1/N_p``."""
    n_p = len(lengths)
    return np.concatenate([np.full(n, 1.0 / (n_p * n)) for n in lengths])


def fm_ts_system(data: TimeSeriesDataset, basis: BasisSet, cg_map: Optional[CgMap] = None) -> LinearSystem:
    if data.cg_forces is None:
        raise ArgumentError("time-series force matching needs a force record per path")
    xs = [as_cg_scalar(p, cg_map) for p in data.paths]
    f = np.concatenate([_targets(fp) for fp in data.cg_forces])
    A = design_matrix(basis, np.concatenate(xs))
    return LinearSystem.from_design(A, f, _path_weights([x.size for x in xs]))


def fit_fm_ts(data: TimeSeriesDataset, basis: BasisSet, cg_map: Optional[CgMap] = None, seed=None) -> ParamEstimate:
    """Force matching pooled over correlated path states, each path weighted equally."""
    theta = solve_normal_equations(fm_ts_system(data, basis, cg_map))
    return ParamEstimate(theta, "fm-ts", data.n_states, seed, True, basis)


# ---------------------------------------------------------------------------
# Relative entropy rate / path-space relative entropy


def transitions(data: TimeSeriesDataset, cg_map: Optional[CgMap] = None):
    """CG start points and increments of every path, plus per-path transition counts."""
    starts, incs, counts = [], [], []
    for p in data.paths:
        x = as_cg_scalar(p, cg_map)
        starts.append(x[:-1])
        incs.append(np.diff(x))
        counts.append(x.size - 1)
    return np.concatenate(starts), np.concatenate(incs), counts


def rer_system(data: TimeSeriesDataset, basis: BasisSet, cg_map: Optional[CgMap] = None) -> LinearSystem:
    x, dx, counts = transitions(data, cg_map)
    h = data.time_step
    return LinearSystem.from_design(design_matrix(basis, x) * h, dx, _path_weights(counts))


def fit_rer(data: TimeSeriesDataset, basis: BasisSet, cg_map: Optional[CgMap] = None, seed=None) -> ParamEstimate:
    """Minimise the mean squared Euler-Maruyama residual ``|dX - a(X; theta) h|^2``.

    One path gives the relative-entropy-rate estimator, several paths the
    path-space estimator; either way each path contributes its own mean.
    Warns with :class:`ShortSeriesWarning` when the longest path spans less
    than 50 time units.
    """
    longest = max(p.shape[0] for p in data.paths)
    if longest * data.time_step < SHORT_SERIES_TIME:
        warnings.warn(
            f"paths span at most {longest * data.time_step:g} time units (< {SHORT_SERIES_TIME:g}); "
            "path-space estimates may be strongly biased",
            ShortSeriesWarning,
            stacklevel=2,
        )
    theta = solve_normal_equations(rer_system(data, basis, cg_map))
    method = "rer" if data.n_paths == 1 else "psre"
    n = sum(p.shape[0] - 1 for p in data.paths)
    return ParamEstimate(theta, method, n, seed, True, basis)


# ---------------------------------------------------------------------------
# Equilibrium relative entropy


class GibbsModel:
    """CG Gibbs family ``mu(x) ~ exp(-2 theta . psi(x))`` on a quadrature grid.

    ``psi`` is the gradient of the potential with respect to theta; for a
    monomial drift basis it is :func:`potential_features`. Any feature map can
    be supplied for other exponential families.

    The grid ``[-half_width, half_width]`` is the model's state space: with
    an odd leading power the potential is unbounded below on the real line,
    so the family is only normalisable on a window. ``tail_tol`` optionally
    re-imposes the decay check of :func:`cg_invariant_density`.
    """

    def __init__(self, basis: BasisSet, half_width=QUAD_HALF_WIDTH, n_points=QUAD_POINTS,
                 features: Optional[Callable] = None, tail_tol: Optional[float] = None):
        if features is None and basis.kind != MONOMIAL:
            raise UnsupportedBasisError("relative entropy needs a monomial drift basis or explicit features")
        self.basis = basis
        self.K = basis.K
        self.features = features or (lambda x: potential_features(basis, x))
        self.xs = default_grid(half_width, n_points)
        self.wq = trapezoid_weights(self.xs)
        self.psi_grid = self.features(self.xs)
        self.tail_tol = tail_tol

    def density(self, theta):
        """Return ``(log Z, normalised density on the grid)``."""
        log_z, dens, _ = log_boltzmann_weights(-2.0 * self.psi_grid @ np.asarray(theta, dtype=float), self.xs,
                                             self.tail_tol)
        return log_z, dens

    def log_z(self, theta):
        return self.density(theta)[0]

    def moments(self, theta):
        """Mean and covariance of psi under the model at ``theta``."""
        _, dens = self.density(theta)
        w = self.wq * dens
        w = w / w.sum()
        mean = w @ self.psi_grid
        c = self.psi_grid - mean
        cov = (c * w[:, None]).T @ c
        return mean, 0.5 * (cov + cov.T)

    def log_density(self, theta, x):
        return -2.0 * self.features(x) @ np.asarray(theta, dtype=float) - self.log_z(theta)


def _psi_data(data, model, cg_map):
    x = data if isinstance(data, np.ndarray) else as_cg_scalar(data.states, cg_map)
    return model.features(np.asarray(x, dtype=float).ravel())


def re_objective(theta, data, model: GibbsModel, cg_map: Optional[CgMap] = None, potential_shift: float = 0.0):
    """Mean CG log-likelihood ``-(2/N) sum U(X_i; theta) - log Z``.

    ``potential_shift`` adds a constant to the potential in both terms; the
    objective is invariant to it.
    """
    theta = np.asarray(theta, dtype=float)
    psi = _psi_data(data, model, cg_map)
    u_data = psi @ theta + potential_shift
    log_w = -2.0 * (model.psi_grid @ theta + potential_shift)
    log_z, _, _ = log_boltzmann_weights(log_w, model.xs, model.tail_tol)
    return float(-2.0 * u_data.mean() - log_z)


@dataclass
class NewtonOptions:
    max_iter: int = 50
    grad_tol: float = 1e-8
    theta0: Optional[np.ndarray] = None
    quad_domain: float = QUAD_HALF_WIDTH
    quad_points: int = QUAD_POINTS
    max_halvings: int = 30

    def __post_init__(self):
        if self.max_iter < 1:
            raise ArgumentError("max_iter must be >= 1")
        if not self.grad_tol > 0:
            raise ArgumentError("grad_tol must be positive")


@dataclass
class NewtonTrace:
    objective: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    fallbacks: int = 0


def harmonic_start(K):
    """theta = (0, -1, 0, ...): the harmonic CG drift, a confining starting point."""
    theta = np.zeros(K)
    if K > 1:
        theta[1] = -1.0
    return theta


def fit_re_iid(data, basis: BasisSet, opts: Optional[NewtonOptions] = None, cg_map: Optional[CgMap] = None,
               model: Optional[GibbsModel] = None, seed=None) -> ParamEstimate:
    """Maximise the equilibrium CG log-likelihood by damped Newton-Raphson.

    Gradient: ``-2 mean_data[psi] + 2 E_theta[psi]``; Hessian of the
    objective: ``-4 Cov_theta[psi]``. The ascent step is
    ``(4 Cov)^-1 grad``. A step is halved (at most ``max_halvings`` times)
    while the candidate is not confining or lowers the objective; if the
    covariance is not positive definite the step falls back to gradient
    ascent with the same line search.
    """
    opts = opts or NewtonOptions()
    model = model or GibbsModel(basis, opts.quad_domain, opts.quad_points)
    psi = _psi_data(data, model, cg_map)
    psi_bar = psi.mean(axis=0)
    n = psi.shape[0]

    def objective(th):
        try:
            val = float(-2.0 * psi_bar @ th - model.log_z(th))
        except (IntegrabilityError, FloatingPointError):
            return -np.inf
        return val if np.isfinite(val) else -np.inf

    theta = harmonic_start(basis.K) if opts.theta0 is None else np.array(opts.theta0, dtype=float)
    obj = objective(theta)
    if not np.isfinite(obj):
        raise IntegrabilityError("theta0 is not confining on the quadrature grid")
    trace = NewtonTrace([obj])
    converged = False
    for it in range(opts.max_iter):
        mean, cov = model.moments(theta)
        grad = -2.0 * psi_bar + 2.0 * mean
        gnorm = float(np.max(np.abs(grad)))
        trace.grad_norm.append(gnorm)
        if gnorm < opts.grad_tol:
            converged = True
            break
        hess = 4.0 * cov
        try:
            check_conditioning(hess, "RE Hessian")
            step = np.linalg.solve(hess, grad)
            newton = True
        except ConditioningError:
            step = grad / max(np.max(np.abs(grad)), 1.0)
            newton = False
            trace.fallbacks += 1
            warnings.warn(f"RE Hessian not positive definite at iteration {it}; gradient step used", NewtonWarning,
                          stacklevel=2)
        t = 1.0
        for _ in range(opts.max_halvings + 1):
            cand = theta + t * step
            c_obj = objective(cand)
            if np.isfinite(c_obj) and c_obj >= obj - 1e-14 * max(1.0, abs(obj)):
                break
            t *= 0.5
        else:
            log.debug("line search exhausted at iteration %d", it)
            if newton:
                trace.fallbacks += 1
            break
        theta, obj = cand, c_obj
        trace.objective.append(obj)
    else:
        mean, _ = model.moments(theta)
        gnorm = float(np.max(np.abs(-2.0 * psi_bar + 2.0 * mean)))
        trace.grad_norm.append(gnorm)
        converged = gnorm < opts.grad_tol
    if not converged:
        warnings.warn(f"Newton-Raphson stopped without reaching grad_tol={opts.grad_tol}", NewtonWarning, stacklevel=2)
    info = {"iterations": len(trace.objective) - 1, "objective": trace.objective, "grad_norm": trace.grad_norm,
            "fallbacks": trace.fallbacks}
    return ParamEstimate(theta, "re-iid", n, seed, converged, basis, info)
