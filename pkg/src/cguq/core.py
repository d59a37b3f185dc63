"""Domain types, basis functions and coarse-graining maps shared by all modules.

Bases are scalar, linear-in-parameter function families::

    f(x; theta) = sum_k theta_k phi_k(x)

``monomial`` gives phi_k(x) = x**(k-1). ``linear-bspline`` and
``cubic-bspline`` are clamped B-splines on uniform knots over
``[r_min, r_max]``, evaluated with the Cox-de Boor recursion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import ArgumentError, DomainError, UnsupportedBasisError

MONOMIAL = "monomial"
LINEAR_BSPLINE = "linear-bspline"
CUBIC_BSPLINE = "cubic-bspline"
BASIS_KINDS = (MONOMIAL, LINEAR_BSPLINE, CUBIC_BSPLINE)
_DEGREE = {LINEAR_BSPLINE: 1, CUBIC_BSPLINE: 3}


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Basis sets


@dataclass(frozen=True)
class BasisSet:
    """A linear-in-parameter scalar basis.

    Use :meth:`monomial` or :meth:`bspline` rather than the raw constructor.
    """

    kind: str
    K: int
    domain: Optional[tuple] = None
    knots: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise ArgumentError(f"unknown basis kind {self.kind!r}")
        if int(self.K) < 1:
            raise ArgumentError("basis needs K >= 1")
        object.__setattr__(self, "K", int(self.K))
        if self.kind == MONOMIAL:
            return
        if self.domain is None or self.knots is None:
            raise ArgumentError("spline basis needs domain and knots")
        lo, hi = (float(v) for v in self.domain)
        if not hi > lo:
            raise ArgumentError("spline domain must satisfy r_min < r_max")
        knots = _frozen(self.knots)
        p = self.degree
        if knots.size != self.K + p + 1:
            raise ArgumentError(f"{self.kind} with K={self.K} needs {self.K + p + 1} knots, got {knots.size}")
        if np.any(np.diff(knots) < 0):
            raise ArgumentError("knots must be non-decreasing")
        if not (np.all(knots[: p + 1] == lo) and np.all(knots[-(p + 1):] == hi)):
            raise ArgumentError("knot vector must be clamped to the domain ends")
        object.__setattr__(self, "domain", (lo, hi))
        object.__setattr__(self, "knots", knots)

    @classmethod
    def monomial(cls, K):
        return cls(MONOMIAL, K)

    @classmethod
    def bspline(cls, K, domain, degree=3):
        """Clamped B-spline basis with uniform interior knots.

        Parameters
        ----------
        K : int
            Number of basis functions; must be at least ``degree + 1``.
        domain : (float, float)
            Support ``[r_min, r_max]``.
        degree : {1, 3}
            1 for hat functions, 3 for cubic splines.
        """
        kind = {1: LINEAR_BSPLINE, 3: CUBIC_BSPLINE}.get(degree)
        if kind is None:
            raise ArgumentError("only linear (1) and cubic (3) B-splines are supported")
        if K < degree + 1:
            raise ArgumentError(f"degree-{degree} spline needs K >= {degree + 1}")
        lo, hi = (float(v) for v in domain)
        inner = np.linspace(lo, hi, K - degree + 1)
        knots = np.concatenate([np.full(degree, lo), inner, np.full(degree, hi)])
        return cls(kind, K, (lo, hi), knots)

    @property
    def degree(self):
        return _DEGREE.get(self.kind)

    @property
    def is_spline(self):
        return self.kind != MONOMIAL

    def to_dict(self):
        return {
            "kind": self.kind,
            "K": self.K,
            "domain": None if self.domain is None else list(self.domain),
            "knots": None if self.knots is None else [float(t) for t in self.knots],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d["K"], None if d.get("domain") is None else tuple(d["domain"]), d.get("knots"))

    def __eq__(self, other):
        if not isinstance(other, BasisSet):
            return NotImplemented
        same_knots = (self.knots is None and other.knots is None) or (
            self.knots is not None and other.knots is not None and np.array_equal(self.knots, other.knots)
        )
        return self.kind == other.kind and self.K == other.K and self.domain == other.domain and same_knots

    def __hash__(self):
        return hash((self.kind, self.K, self.domain))


def _check_domain(basis, x):
    lo, hi = basis.domain
    if np.any(x < lo) or np.any(x > hi) or np.any(~np.isfinite(x)):
        bad = x[(x < lo) | (x > hi) | ~np.isfinite(x)]
        raise DomainError(f"{basis.kind} evaluated outside [{lo}, {hi}]: e.g. x={bad.flat[0]!r}")


def _bspline_table(knots, degree, x):
    """Cox-de Boor recursion; returns the degree-``degree`` basis, shape (n, len(knots)-degree-1)."""
    t = knots
    n_int = t.size - 1
    # degree 0: half-open spans, except the right domain end belongs to the last non-empty span
    B = ((t[None, :-1] <= x[:, None]) & (x[:, None] < t[None, 1:])).astype(float)
    at_end = x == t[-1]
    if np.any(at_end):
        last = np.nonzero(t[:-1] < t[1:])[0][-1]
        B[at_end, :] = 0.0
        B[at_end, last] = 1.0
    for p in range(1, degree + 1):
        m = n_int - p
        left_den = t[p: p + m] - t[:m]
        right_den = t[p + 1: p + 1 + m] - t[1: 1 + m]
        with np.errstate(divide="ignore", invalid="ignore"):
            lw = np.where(left_den > 0, (x[:, None] - t[None, :m]) / left_den, 0.0)
            rw = np.where(right_den > 0, (t[None, p + 1: p + 1 + m] - x[:, None]) / right_den, 0.0)
        B = lw * B[:, :m] + rw * B[:, 1: m + 1]
    return B


def design_matrix(basis: BasisSet, x) -> np.ndarray:
    """Evaluate all basis functions at every point of ``x``; shape (n, K)."""
    x = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    if basis.kind == MONOMIAL:
        return x[:, None] ** np.arange(basis.K)[None, :]
    _check_domain(basis, x)
    return _bspline_table(basis.knots, basis.degree, x)


def design_matrix_deriv(basis: BasisSet, x) -> np.ndarray:
    """First derivatives of all basis functions; shape (n, K).

    Hat functions are piecewise linear, so at a knot the right-sided slope
    is returned (left-sided at ``r_max``).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    K = basis.K
    if basis.kind == MONOMIAL:
        k = np.arange(K)
        out = np.zeros((x.size, K))
        if K > 1:
            out[:, 1:] = k[None, 1:] * x[:, None] ** (k[None, 1:] - 1)
        return out
    _check_domain(basis, x)
    p, t = basis.degree, basis.knots
    lower = _bspline_table(t, p - 1, x)  # K + 1 functions of degree p-1
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(t[p: p + K] > t[:K], p / (t[p: p + K] - t[:K]), 0.0)
        b = np.where(t[p + 1: p + 1 + K] > t[1: 1 + K], p / (t[p + 1: p + 1 + K] - t[1: 1 + K]), 0.0)
    return a[None, :] * lower[:, :K] - b[None, :] * lower[:, 1: K + 1]


def eval_basis(basis: BasisSet, x: float) -> np.ndarray:
    """Return ``(phi_1(x), ..., phi_K(x))``.

    Raises
    ------
    DomainError
        For spline bases when ``x`` lies outside ``[r_min, r_max]``.
    """
    return design_matrix(basis, [x])[0]


def eval_basis_deriv(basis: BasisSet, x: float) -> np.ndarray:
    """Return ``(phi_1'(x), ..., phi_K'(x))``."""
    return design_matrix_deriv(basis, [x])[0]


def _theta(basis, theta):
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != basis.K:
        raise ArgumentError(f"theta has length {theta.size}, basis has K={basis.K}")
    return theta


def eval_model(basis: BasisSet, theta, x):
    """Inner product of ``theta`` with the basis at ``x`` (scalar or array)."""
    theta = _theta(basis, theta)
    scalar = np.ndim(x) == 0
    vals = design_matrix(basis, x) @ theta
    return float(vals[0]) if scalar else vals


def potential_features(basis: BasisSet, x) -> np.ndarray:
    """Gradient of the drift potential with respect to theta, shape (n, K).

    For ``a(x) = sum theta_k x**(k-1)`` and ``a = -dU/dx`` with ``U(0) = 0``
    this is ``-(x, x**2/2, ..., x**K/K)``.
    """
    if basis.kind != MONOMIAL:
        raise UnsupportedBasisError("drift potential is defined for monomial bases only")
    x = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    k = np.arange(1, basis.K + 1)
    return -(x[:, None] ** k[None, :]) / k[None, :]


def antiderivative_potential(basis: BasisSet, theta, x):
    """Potential ``U(x; theta) = -sum theta_k x**k / k`` with ``U(0) = 0``."""
    theta = _theta(basis, theta)
    scalar = np.ndim(x) == 0
    vals = potential_features(basis, x) @ theta
    return float(vals[0]) if scalar else vals


# ---------------------------------------------------------------------------
# Coarse-graining maps


@dataclass(frozen=True)
class CgMap:
    """Projection from a fine state (dimension D) to a CG state (dimension d)."""

    kind: str
    selection: Optional[tuple] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "coordinate-selection":
            sel = tuple(int(i) for i in self.selection)
            if len(sel) == 0 or len(set(sel)) != len(sel) or min(sel) < 0:
                raise ArgumentError("selection indices must be distinct and non-negative")
            object.__setattr__(self, "selection", sel)
        elif self.kind == "linear":
            w = _frozen(np.atleast_2d(self.weights))
            if np.any(w < 0):
                raise ArgumentError("linear CG weights must be non-negative")
            object.__setattr__(self, "weights", w)
        else:
            raise ArgumentError(f"unknown CG map kind {self.kind!r}")

    @classmethod
    def select(cls, *indices):
        return cls("coordinate-selection", selection=indices)

    @classmethod
    def linear(cls, weights):
        return cls("linear", weights=weights)

    @property
    def input_dim(self):
        return None if self.kind == "coordinate-selection" else self.weights.shape[1]

    @property
    def output_dim(self):
        return len(self.selection) if self.kind == "coordinate-selection" else self.weights.shape[0]

    def apply(self, states) -> np.ndarray:
        """Project a batch of states, shape (n, D) -> (n, d)."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        D = states.shape[1]
        if self.kind == "coordinate-selection":
            if max(self.selection) >= D:
                raise ArgumentError(f"selection {self.selection} invalid for state dimension {D}")
            return states[:, list(self.selection)]
        if self.weights.shape[1] != D:
            raise ArgumentError(f"map expects dimension {self.weights.shape[1]}, state has {D}")
        return states @ self.weights.T


def cg_project(cg_map: CgMap, state) -> np.ndarray:
    """Map one fine state to its CG state."""
    state = np.asarray(state, dtype=float)
    if state.ndim != 1:
        raise ArgumentError("cg_project takes a single state vector")
    return cg_map.apply(state[None, :])[0]


X_ONLY = CgMap.select(0)


# ---------------------------------------------------------------------------
# Datasets


@dataclass(frozen=True)
class IidDataset:
    """Independent fine-scale states, optionally with CG force observations."""

    states: np.ndarray
    cg_forces: Optional[np.ndarray] = None
    labels: Optional[str] = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if states.ndim != 2 or states.shape[1] < 1:
            raise ArgumentError("states must be an (N, D) array")
        object.__setattr__(self, "states", _frozen(states))
        if self.cg_forces is not None:
            f = np.asarray(self.cg_forces, dtype=float)
            if f.ndim == 1:
                f = f[:, None]
            if f.shape[0] != states.shape[0]:
                raise ArgumentError("cg_forces and states differ in length")
            if f.shape[1] > states.shape[1]:
                raise ArgumentError("CG force dimension exceeds state dimension")
            object.__setattr__(self, "cg_forces", _frozen(f))

    def __len__(self):
        return self.states.shape[0]

    @property
    def dim(self):
        return self.states.shape[1]

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        f = None if self.cg_forces is None else self.cg_forces[idx]
        return IidDataset(self.states[idx], f, self.labels)


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Uniformly sampled trajectories; the resampling unit is a whole path."""

    paths: tuple
    time_step: float
    stationary: bool = False
    cg_forces: Optional[tuple] = None

    def __post_init__(self):
        paths = []
        for p in self.paths:
            p = np.asarray(p, dtype=float)
            if p.ndim == 1:
                p = p[:, None]
            paths.append(_frozen(p))
        if not paths:
            raise ArgumentError("time series needs at least one path")
        if any(p.shape[0] < 2 for p in paths):
            raise ArgumentError("every trajectory needs at least 2 states")
        if len({p.shape[1] for p in paths}) != 1:
            raise ArgumentError("all states must share one dimension")
        if not float(self.time_step) > 0:
            raise ArgumentError("time_step must be positive")
        object.__setattr__(self, "paths", tuple(paths))
        object.__setattr__(self, "time_step", float(self.time_step))
        if self.cg_forces is not None:
            forces = []
            for p, f in zip(paths, self.cg_forces):
                f = np.asarray(f, dtype=float)
                if f.ndim == 1:
                    f = f[:, None]
                if f.shape[0] != p.shape[0]:
                    raise ArgumentError("force record length differs from its path")
                forces.append(_frozen(f))
            if len(forces) != len(paths):
                raise ArgumentError("one force record per path required")
            object.__setattr__(self, "cg_forces", tuple(forces))

    def __len__(self):
        return len(self.paths)

    @property
    def n_paths(self):
        return len(self.paths)

    @property
    def dim(self):
        return self.paths[0].shape[1]

    @property
    def n_states(self):
        return sum(p.shape[0] for p in self.paths)

    def take(self, idx):
        idx = [int(i) for i in np.asarray(idx).ravel()]
        f = None if self.cg_forces is None else tuple(self.cg_forces[i] for i in idx)
        return TimeSeriesDataset(tuple(self.paths[i] for i in idx), self.time_step, self.stationary, f)


# ---------------------------------------------------------------------------
# Results

FIT_METHODS = ("fm-iid", "re-iid", "rer", "psre", "fm-ts", "pair-fm")
CI_METHODS = ("asymptotic", "jackknife", "bootstrap-standard", "bootstrap-percentile")


@dataclass(frozen=True)
class ParamEstimate:
    theta: np.ndarray
    method: str
    n_samples: int
    seed: Optional[int] = None
    converged: bool = True
    basis: Optional[BasisSet] = None
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.method not in FIT_METHODS:
            raise ArgumentError(f"unknown estimator {self.method!r}")
        theta = _frozen(np.asarray(self.theta, dtype=float).ravel())
        if self.basis is not None and theta.size != self.basis.K:
            raise ArgumentError("theta length does not match basis")
        if int(self.n_samples) < 1:
            raise ArgumentError("n_samples must be >= 1")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "n_samples", int(self.n_samples))

    def to_dict(self):
        return {
            "method": self.method,
            "theta": [float(v) for v in self.theta],
            "n_samples": self.n_samples,
            "seed": self.seed,
            "converged": bool(self.converged),
            "basis": None if self.basis is None else self.basis.to_dict(),
            "info": self.info,
        }

    def __eq__(self, other):
        if not isinstance(other, ParamEstimate):
            return NotImplemented
        a, b = self.to_dict(), other.to_dict()
        a.pop("info"), b.pop("info")
        return a == b

    __hash__ = None

    @classmethod
    def from_dict(cls, d):
        basis = None if d.get("basis") is None else BasisSet.from_dict(d["basis"])
        return cls(d["theta"], d["method"], d["n_samples"], d.get("seed"), d.get("converged", True), basis, d.get("info", {}))


@dataclass(frozen=True)
class ConfidenceReport:
    """Per-coordinate interval report.

    ``estimate`` is the point estimate the interval refers to. For QoI bands
    ``grid`` holds the evaluation points and each coordinate is one grid point.
    """

    method: str
    alpha: float
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    variance: Optional[np.ndarray] = None
    grid: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.method not in CI_METHODS:
            raise ArgumentError(f"unknown CI method {self.method!r}")
        if not 0.0 < float(self.alpha) <= 1.0:
            raise ArgumentError("alpha must lie in (0, 1]")
        est, lo, hi = (_frozen(np.atleast_1d(v)) for v in (self.estimate, self.lower, self.upper))
        if not (est.shape == lo.shape == hi.shape):
            raise ArgumentError("estimate/lower/upper shapes differ")
        if np.any(lo > hi):
            raise ArgumentError("lower bound exceeds upper bound")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "estimate", est)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if self.variance is not None:
            object.__setattr__(self, "variance", _frozen(np.atleast_1d(self.variance)))
        if self.grid is not None:
            object.__setattr__(self, "grid", _frozen(np.atleast_1d(self.grid)))

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return (self.lower <= values) & (values <= self.upper)

    def to_dict(self):
        return {
            "method": self.method,
            "alpha": self.alpha,
            "estimate": self.estimate.tolist(),
            "variance": None if self.variance is None else self.variance.tolist(),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "grid": None if self.grid is None else self.grid.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["method"], d["alpha"], d["estimate"], d["lower"], d["upper"], d.get("variance"), d.get("grid"))


def as_cg_scalar(states, cg_map: Optional[CgMap] = None) -> np.ndarray:
    """Project states to a 1-D CG coordinate (default: first coordinate)."""
    cg = (cg_map or X_ONLY).apply(states)
    if cg.shape[1] != 1:
        raise ArgumentError("scalar bases need a one-dimensional CG variable")
    return cg[:, 0]


def check_sequence_nonempty(seq: Sequence, what: str):
    if len(seq) == 0:
        raise ArgumentError(f"{what} is empty")
