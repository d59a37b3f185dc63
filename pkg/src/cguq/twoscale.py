"""Two-scale diffusion test-bed.

Slow/fast pair::

    dX = -Y dt + dW1
    dY = -(Y - X)/eps dt + eps**-0.5 dW2

As eps -> 0 the slow variable follows dX = -X dt + dW, whose CG drift
in the monomial basis is theta* = (0, -1, 0, ...). Paths are integrated by
Euler-Maruyama at a fine step and recorded on a coarser grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .core import BasisSet, IidDataset, TimeSeriesDataset, antiderivative_potential
from .exceptions import ArgumentError, ConfigurationError, IntegrabilityError
from .seeding import run_indexed, stream

RECORD_STEP = 0.01
DEFAULT_EPS = 0.005
DEFAULT_BURN_IN_TIME = 100.0
DEFAULT_IID_STRIDE_TIME = 5.0
QUAD_HALF_WIDTH = 8.0
QUAD_POINTS = 4001

_CHUNK = 1 << 18


@dataclass(frozen=True)
class TwoScaleParams:
    """Integration settings; ``h_fine`` defaults to ``epsilon / 10``."""

    epsilon: float = DEFAULT_EPS
    h_fine: Optional[float] = None
    x0: float = 0.0
    y0: float = 0.0
    seed: int = 0
    check_stability: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        h = self.epsilon / 10.0 if self.h_fine is None else float(self.h_fine)
        if not h > 0:
            raise ConfigurationError("h_fine must be positive")
        if self.check_stability and h > self.epsilon / 2.0 * (1 + 1e-12):
            raise ConfigurationError(
                f"h_fine={h} exceeds epsilon/2={self.epsilon / 2}; explicit stepping of the fast variable is unstable"
            )
        object.__setattr__(self, "h_fine", h)

    def steps_per(self, dt):
        """Number of fine steps spanning ``dt``; ``dt`` must be a multiple of ``h_fine``."""
        n = dt / self.h_fine
        k = int(round(n))
        if k < 1 or abs(n - k) > 1e-9 * max(1.0, n):
            raise ConfigurationError(f"time {dt} is not a multiple of h_fine={self.h_fine}")
        return k


@numba.njit(cache=True, nogil=True)
def _em_kernel(x, y, eps, h, noise, stride, out, start):
    """Advance (x, y) over ``noise.shape[0]`` steps, storing every ``stride``-th state.

    ``start`` is the running step counter modulo ``stride`` so chunked calls
    record the same states as one long call.
    """
    sqh = np.sqrt(h)
    sqf = np.sqrt(h / eps)
    inv = h / eps
    k = 0
    c = start
    for i in range(noise.shape[0]):
        xn = x - y * h + sqh * noise[i, 0]
        y = y - (y - x) * inv + sqf * noise[i, 1]
        x = xn
        c += 1
        if c == stride:
            c = 0
            out[k, 0] = x
            out[k, 1] = y
            k += 1
    return x, y, c, k


def _integrate(params, rng, x, y, n_steps, stride, noise=True):
    """Run ``n_steps`` fine steps from (x, y); return recorded states and final state."""
    n_rec = n_steps // stride
    out = np.empty((n_rec, 2))
    k = 0
    c = 0
    done = 0
    while done < n_steps:
        m = min(_CHUNK, n_steps - done)
        xi = rng.standard_normal((m, 2)) if noise else np.zeros((m, 2))
        x, y, c, kk = _em_kernel(x, y, params.epsilon, params.h_fine, xi, stride, out[k:], c)
        k += kk
        done += m
    return out, x, y


def simulate_two_scale(params: TwoScaleParams, n_steps: int, record_stride: int = 1, noise: bool = True,
                       rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Euler-Maruyama path of the two-scale system.

    Returns an array of shape ``(n_steps // record_stride + 1, 2)`` holding
    the initial state followed by every ``record_stride``-th state.
    ``noise=False`` drops the Wiener increments (drift-only diagnostic).
    """
    if int(n_steps) < 1:
        raise ArgumentError("n_steps must be >= 1")
    if int(record_stride) < 1:
        raise ArgumentError("record_stride must be >= 1")
    rng = stream(params.seed) if rng is None else rng
    rec, _, _ = _integrate(params, rng, float(params.x0), float(params.y0), int(n_steps), int(record_stride), noise)
    return np.vstack([[params.x0, params.y0], rec])


def subsample_iid(trajectory, burn_in: int, stride: int, with_forces: bool = True) -> IidDataset:
    """Keep states ``burn_in, burn_in + stride, ...`` of an (x, y) trajectory.

    With ``with_forces`` the CG force observation ``-y`` (the slow drift felt
    by x) is attached to each sample.
    """
    traj = np.asarray(trajectory, dtype=float)
    if stride < 1 or burn_in < 0:
        raise ArgumentError("need stride >= 1 and burn_in >= 0")
    if burn_in + stride > traj.shape[0] and not (stride == 1 and burn_in < traj.shape[0]):
        raise ArgumentError("burn_in + stride exceeds trajectory length")
    sel = traj[burn_in::stride]
    if sel.shape[0] == 0:
        raise ArgumentError("subsample is empty")
    return IidDataset(sel, -sel[:, 1:2] if with_forces else None, labels="two-scale iid")


def sample_iid(params: TwoScaleParams, n: int, stride_time: float = DEFAULT_IID_STRIDE_TIME,
               burn_in_time: float = DEFAULT_BURN_IN_TIME, rng=None) -> IidDataset:
    """Approximately independent stationary samples from one long path.

    Equivalent to :func:`simulate_two_scale` followed by :func:`subsample_iid`
    but only stores the kept states.
    """
    if n < 1:
        raise ArgumentError("n must be >= 1")
    rng = stream(params.seed) if rng is None else rng
    stride = params.steps_per(stride_time)
    burn = params.steps_per(burn_in_time) if burn_in_time > 0 else 0
    x, y = float(params.x0), float(params.y0)
    if burn:
        _, x, y = _integrate(params, rng, x, y, burn, burn)
    rec, _, _ = _integrate(params, rng, x, y, n * stride, stride)
    return IidDataset(rec, -rec[:, 1:2], labels="two-scale iid")


def _one_path(params, seed, index, n_t, record_stride, burn):
    rng = stream(seed, index)
    x, y = float(params.x0), float(params.y0)
    if burn:
        _, x, y = _integrate(params, rng, x, y, burn, burn)
    rec, _, _ = _integrate(params, rng, x, y, (n_t - 1) * record_stride, record_stride)
    return np.vstack([[x, y], rec])


def generate_paths(params: TwoScaleParams, n_paths: int, n_t: int, record_stride: Optional[int] = None,
                   burn_in_time: float = DEFAULT_BURN_IN_TIME, threads: int = 1) -> TimeSeriesDataset:
    """Independent recorded paths, each on its own RNG stream ``(seed, path_index)``.

    ``record_stride`` defaults to the number of fine steps in 0.01 time units.
    The recorded states carry ``-y`` as force observation for the
    time-series force-matching estimator.
    """
    if n_paths < 1 or n_t < 2:
        raise ArgumentError("need n_paths >= 1 and n_t >= 2")
    stride = params.steps_per(RECORD_STEP) if record_stride is None else int(record_stride)
    burn = params.steps_per(burn_in_time) if burn_in_time > 0 else 0
    paths = run_indexed(lambda i: _one_path(params, params.seed, i, n_t, stride, burn), n_paths, threads)
    forces = tuple(-p[:, 1:2] for p in paths)
    return TimeSeriesDataset(tuple(paths), stride * params.h_fine, stationary=burn > 0, cg_forces=forces)


# ---------------------------------------------------------------------------
# CG invariant density


@dataclass(frozen=True)
class DensityGrid:
    """Normalised density ``exp(-2 U(x)) / Z`` tabulated on a grid."""

    xs: np.ndarray
    values: np.ndarray
    normalization: float
    log_z: float

    def cdf(self):
        c = np.concatenate([[0.0], np.cumsum(0.5 * (self.values[1:] + self.values[:-1]) * np.diff(self.xs))])
        return c / c[-1]

    def sample(self, n, rng):
        """Inverse-CDF draws with linear interpolation of the tabulated CDF."""
        c = self.cdf()
        keep = np.concatenate([[True], np.diff(c) > 0])
        return np.interp(rng.random(n), c[keep], self.xs[keep])

    def mode(self):
        return float(self.xs[np.argmax(self.values)])


def default_grid(half_width=QUAD_HALF_WIDTH, n_points=QUAD_POINTS):
    return np.linspace(-half_width, half_width, n_points)


def trapezoid_weights(xs):
    w = np.zeros_like(xs)
    d = np.diff(xs)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def log_boltzmann_weights(log_w, xs, tail_tol=1e-12):
    """Stable ``log Z`` and normalised density from log-weights on a grid.

    ``tail_tol=None`` treats the grid as the whole state space and skips the
    decay check at its ends.
    """
    top = np.max(log_w)
    if not np.isfinite(top):
        raise IntegrabilityError("Boltzmann weight not finite on the grid")
    rel = np.exp(log_w - top)
    if tail_tol is not None and (rel[0] > tail_tol or rel[-1] > tail_tol):
        raise IntegrabilityError(
            f"density at grid ends is {max(rel[0], rel[-1]):.3g} of its maximum; potential is not confining on the grid"
        )
    integral = float(np.dot(trapezoid_weights(xs), rel))
    return top + np.log(integral), rel / integral, integral


def cg_invariant_density(theta, grid=None, basis: Optional[BasisSet] = None) -> DensityGrid:
    """Invariant density of ``dX = a(X; theta) dt + dW`` on ``grid``.

    Raises
    ------
    IntegrabilityError
        When the tabulated weight has not decayed below 1e-12 of its peak at
        the grid ends.
    """
    theta = np.asarray(theta, dtype=float)
    basis = BasisSet.monomial(theta.size) if basis is None else basis
    xs = default_grid() if grid is None else np.asarray(grid, dtype=float)
    if xs.ndim != 1 or xs.size < 3 or np.any(np.diff(xs) <= 0):
        raise ArgumentError("grid must be strictly increasing with >= 3 points")
    log_w = -2.0 * antiderivative_potential(basis, theta, xs)
    log_z, dens, integral = log_boltzmann_weights(log_w, xs)
    return DensityGrid(xs, dens, integral, log_z)


def stationary_variance(epsilon):
    """Exact stationary variance of x for the continuous-time two-scale system."""
    return 0.5 + epsilon
