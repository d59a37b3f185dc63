"""Pairwise force matching for a CG pair potential in a periodic cubic box.

The model force on bead I is ``F_I = sum_{J != I} -u'(r_IJ) u_IJ`` with
``u(r; theta) = sum_k theta_k phi_k(r)`` on a B-spline basis supported on
``[r_min, r_cut]`` and ``u_IJ`` the minimum-image unit vector from J to I.

Forces only see ``u'``, and the clamped B-splines sum to one, so a constant
shift of ``theta`` is invisible to the data. Fits fix that gauge by setting
the last coefficient to zero, i.e. ``u(r_cut) = 0``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np

from .core import BasisSet, ParamEstimate, design_matrix, design_matrix_deriv
from .estimators import LinearSystem, check_conditioning, solve_normal_equations
from .exceptions import (
    ArgumentError,
    ConditioningError,
    ConfigurationError,
    DomainError,
    TuningError,
    UnsupportedBasisError,
)
from .seeding import run_indexed, stream, tree_sum
from .uq import (
    DEFAULT_B,
    bootstrap,
    jackknife_replicates,
    jackknife_variance,
    qoi_bootstrap_ci,
)

log = logging.getLogger(__name__)

DEFAULT_M = 125
DEFAULT_DENSITY = 0.7
LENGTH_UNIT = 0.65
DEFAULT_CUTOFF = 1.4
DEFAULT_R_MIN = 0.35
DEFAULT_K = 30
DECORRELATION_SWEEPS = 20
EQUILIBRATION_SWEEPS = 200
CONFIGS_PER_CHAIN = 25
TARGET_ACCEPTANCE = 0.4
ACCEPTANCE_RANGE = (0.1, 0.9)


# ---------------------------------------------------------------------------
# Configurations and neighbour lists


@dataclass(frozen=True)
class ParticleConfig:
    """One configuration of ``m`` beads in a cubic periodic box.

    Positions are wrapped into ``[0, box_length)`` on construction.
    """

    positions: np.ndarray
    forces: np.ndarray
    box_length: float

    def __post_init__(self):
        L = float(self.box_length)
        if not L > 0:
            raise ArgumentError("box_length must be positive")
        q = np.array(self.positions, dtype=float)
        f = np.array(self.forces, dtype=float)
        if q.ndim != 2 or q.shape[1] != 3 or q.shape[0] < 2:
            raise ArgumentError("positions must be an m x 3 array with m >= 2")
        if f.shape != q.shape:
            raise ArgumentError("forces must have the same shape as positions")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(f))):
            raise ArgumentError("positions and forces must be finite")
        q = np.mod(q, L)
        q[q >= L] = 0.0  # mod can round up to L itself
        for a in (q, f):
            a.setflags(write=False)
        object.__setattr__(self, "positions", q)
        object.__setattr__(self, "forces", f)
        object.__setattr__(self, "box_length", L)

    @property
    def m(self):
        return self.positions.shape[0]


@dataclass(frozen=True)
class PairList:
    """Pairs ``I < J`` within ``cutoff``, sorted by ``(I, J)``.

    ``unit`` holds the minimum-image unit vectors pointing from J to I.
    """

    i: np.ndarray
    j: np.ndarray
    r: np.ndarray
    unit: np.ndarray
    cutoff: float

    def __len__(self):
        return self.i.size


def minimum_image(delta, box_length):
    return delta - box_length * np.round(delta / box_length)


def _pairs_from_candidates(q, L, ii, jj, cutoff):
    d = minimum_image(q[ii] - q[jj], L)
    r = np.sqrt(np.einsum("ij,ij->i", d, d))
    keep = (r <= cutoff) & (r > 0)
    return ii[keep], jj[keep], r[keep], d[keep] / r[keep, None]


def neighbor_pairs(config: ParticleConfig, cutoff: float) -> PairList:
    """All unordered pairs within ``cutoff`` under the minimum-image convention.

    Uses a cell list with cells no smaller than ``cutoff``; when fewer than
    three cells fit along an edge every pair is a candidate.

    Raises
    ------
    ConfigurationError
        If ``cutoff > box_length / 2``.
    """
    L = config.box_length
    cutoff = float(cutoff)
    if not cutoff > 0:
        raise ArgumentError("cutoff must be positive")
    if cutoff > L / 2 * (1 + 1e-12):
        raise ConfigurationError(f"cutoff {cutoff} exceeds half the box length {L / 2}")
    q = config.positions
    m = q.shape[0]
    nc = int(np.floor(L / cutoff))
    if nc < 3:
        ii, jj = np.triu_indices(m, k=1)
    else:
        cell = np.minimum((q / (L / nc)).astype(np.int64), nc - 1)
        cid = (cell[:, 0] * nc + cell[:, 1]) * nc + cell[:, 2]
        order = np.argsort(cid, kind="stable")
        starts = np.searchsorted(cid[order], np.arange(nc ** 3 + 1))
        offsets = np.array([(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)])
        cand_i, cand_j = [], []
        for c0 in range(nc ** 3):
            mine = order[starts[c0]: starts[c0 + 1]]
            if mine.size == 0:
                continue
            base = np.array([c0 // (nc * nc), (c0 // nc) % nc, c0 % nc])
            nb = np.mod(base + offsets, nc)
            nb_ids = np.unique((nb[:, 0] * nc + nb[:, 1]) * nc + nb[:, 2])
            others = np.concatenate([order[starts[c]: starts[c + 1]] for c in nb_ids])
            a, b = np.meshgrid(mine, others, indexing="ij")
            a, b = a.ravel(), b.ravel()
            sel = a < b
            cand_i.append(a[sel])
            cand_j.append(b[sel])
        ii = np.concatenate(cand_i) if cand_i else np.zeros(0, np.int64)
        jj = np.concatenate(cand_j) if cand_j else np.zeros(0, np.int64)
    i, j, r, u = _pairs_from_candidates(q, L, ii.astype(np.int64), jj.astype(np.int64), cutoff)
    order = np.lexsort((j, i))
    return PairList(i[order], j[order], r[order], u[order], cutoff)


# ---------------------------------------------------------------------------
# Force-matching assembly


def _check_pair_basis(basis: BasisSet, cutoff):
    if not basis.is_spline:
        raise UnsupportedBasisError("pair force matching needs a B-spline basis")
    if abs(basis.domain[1] - cutoff) > 1e-12 * max(1.0, cutoff):
        raise ArgumentError(f"basis domain must end at the cutoff {cutoff}, got {basis.domain}")


def pair_design(config: ParticleConfig, basis: BasisSet, cutoff: float, pairs: Optional[PairList] = None):
    """Design matrix (3m x K) and flattened force targets for one configuration.

    Column k holds ``-phi_k'(r_IJ) u_IJ`` on bead I's rows and the opposite
    on bead J's rows, so summing the rows of each Cartesian component gives 0.
    """
    pl = neighbor_pairs(config, cutoff) if pairs is None else pairs
    m, K = config.m, basis.K
    A = np.zeros((m, 3, K))
    if len(pl):
        try:
            dphi = design_matrix_deriv(basis, pl.r)
        except DomainError as exc:
            raise DomainError(f"pair distance {pl.r.min():.4g} below the basis support {basis.domain}") from exc
        contrib = -dphi[:, None, :] * pl.unit[:, :, None]  # (n_pairs, 3, K)
        np.add.at(A, pl.i, contrib)
        np.add.at(A, pl.j, -contrib)
    return A.reshape(3 * m, K), config.forces.reshape(-1)


@dataclass(frozen=True)
class PairFmBlocks:
    """Unnormalised per-configuration normal-equation blocks.

    Supports ``len`` and ``take`` so that resampling over configurations
    reuses the assembled blocks instead of rebuilding pair lists.
    """

    grams: np.ndarray
    moments: np.ndarray
    rows: np.ndarray
    n_pairs: np.ndarray
    basis: BasisSet
    cutoff: float

    def __len__(self):
        return self.rows.size

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return PairFmBlocks(self.grams[idx], self.moments[idx], self.rows[idx], self.n_pairs[idx], self.basis, self.cutoff)

    def system(self) -> LinearSystem:
        n = int(self.rows.sum())
        if n == 0:
            raise ArgumentError("no configurations")
        return LinearSystem(self.grams.sum(axis=0) / n, self.moments.sum(axis=0) / n, n)


def pair_blocks(configs: Sequence[ParticleConfig], basis: BasisSet, cutoff: float, threads: int = 1) -> PairFmBlocks:
    _check_pair_basis(basis, cutoff)
    configs = list(configs)
    if not configs:
        raise ArgumentError("no configurations")

    def block(i):
        pl = neighbor_pairs(configs[i], cutoff)
        A, b = pair_design(configs[i], basis, cutoff, pl)
        return A.T @ A, A.T @ b, A.shape[0], len(pl)

    out = run_indexed(block, len(configs), threads)
    n_pairs = np.array([o[3] for o in out])
    if n_pairs.sum() == 0:
        raise ConditioningError("no pair within the cutoff in any configuration", empty_columns=list(range(basis.K)))
    return PairFmBlocks(
        np.stack([o[0] for o in out]),
        np.stack([o[1] for o in out]),
        np.array([o[2] for o in out]),
        n_pairs,
        basis,
        float(cutoff),
    )


def assemble_pair_fm(configs: Sequence[ParticleConfig], basis: BasisSet, cutoff: float, threads: int = 1) -> LinearSystem:
    """Normal equations of pairwise force matching, averaged over all force components.

    Per-configuration blocks are combined by a fixed-order pairwise sum. The
    full K x K system is returned; it is singular along the constant
    direction (see :func:`solve_pair_system`).
    """
    blocks = pair_blocks(configs, basis, cutoff, threads)
    n = int(blocks.rows.sum())
    systems = [LinearSystem(g, mm, int(r)) for g, mm, r in zip(blocks.grams, blocks.moments, blocks.rows)]
    total = tree_sum(systems)
    return LinearSystem(total.gram / n, total.moment / n, n)


def solve_pair_system(system: LinearSystem) -> np.ndarray:
    """Solve with the gauge ``theta_K = 0`` (potential vanishes at the cutoff)."""
    K = system.moment.size
    if K < 2:
        raise ArgumentError("pair basis needs K >= 2")
    g = system.gram[:-1, :-1]
    try:
        check_conditioning(g)
    except ConditioningError as exc:
        empty = [k for k in range(K - 1) if np.all(g[:, k] == 0)]
        raise ConditioningError(
            f"{exc}; basis columns without pair data: {empty}" if empty and "columns" not in str(exc) else str(exc),
            eigenvalues=exc.eigenvalues,
            empty_columns=empty,
        ) from None
    reduced = solve_normal_equations(LinearSystem(g, system.moment[:-1], system.n_rows))
    return np.append(reduced, 0.0)


def gauge_fix(theta) -> np.ndarray:
    """Shift ``theta`` so the last coefficient is zero (same forces)."""
    theta = np.asarray(theta, dtype=float)
    return theta - theta[-1]


def fit_pair_potential(configs, basis: BasisSet, cutoff: float = DEFAULT_CUTOFF, seed=None, threads: int = 1) -> ParamEstimate:
    """Pairwise force-matching estimate of ``u(r; theta)`` with ``u(r_cut) = 0``.

    ``configs`` may also be a :class:`PairFmBlocks` from an earlier assembly.
    """
    blocks = configs if isinstance(configs, PairFmBlocks) else pair_blocks(configs, basis, cutoff, threads)
    theta = solve_pair_system(blocks.system())
    return ParamEstimate(theta, "pair-fm", len(blocks), seed, True, basis,
                         {"gauge": "u(r_cut)=0", "n_pairs": int(blocks.n_pairs.sum())})


def pair_potential(basis: BasisSet, theta, r) -> np.ndarray:
    return design_matrix(basis, r) @ np.asarray(theta, dtype=float)


# ---------------------------------------------------------------------------
# Synthetic generator


def box_for_density(m=DEFAULT_M, density=DEFAULT_DENSITY, length_unit=LENGTH_UNIT):
    """Cubic box edge giving reduced number density ``m sigma^3 / L^3``."""
    return length_unit * (m / density) ** (1.0 / 3.0)


def morse_potential(r, depth=0.5, r0=0.65, a=5.0, cutoff=DEFAULT_CUTOFF):
    """Morse pair potential shifted to vanish at ``cutoff``."""
    r = np.asarray(r, dtype=float)
    def raw(x):
        return depth * ((1.0 - np.exp(-a * (x - r0))) ** 2 - 1.0)
    return raw(r) - raw(cutoff)


def default_pair_basis(K=DEFAULT_K, r_min=DEFAULT_R_MIN, cutoff=DEFAULT_CUTOFF):
    return BasisSet.bspline(K, (r_min, cutoff), degree=3)


def project_potential(func, basis: BasisSet, n_points: int = 2001) -> np.ndarray:
    """Least-squares projection of ``func`` onto the basis span with ``theta_K = 0``."""
    lo, hi = basis.domain
    r = np.linspace(lo, hi, n_points)
    A = design_matrix(basis, r)[:, :-1]
    coef, *_ = np.linalg.lstsq(A, func(r) - func(hi), rcond=None)
    return np.append(coef, 0.0)


def generator_theta(basis: Optional[BasisSet] = None, **morse):
    """Spline coefficients of the default synthetic generator (projected Morse well)."""
    basis = default_pair_basis() if basis is None else basis
    morse.setdefault("cutoff", basis.domain[1])
    return project_potential(lambda r: morse_potential(r, **morse), basis)


@numba.njit(cache=True, nogil=True)
def _table_energy(r, r_wall, r_cut, r0_tab, dr_tab, tab):
    if r < r_wall:
        return np.inf
    if r > r_cut:
        return 0.0
    s = (r - r0_tab) / dr_tab
    k = int(s)
    if k >= tab.size - 1:
        return tab[tab.size - 1]
    w = s - k
    return (1.0 - w) * tab[k] + w * tab[k + 1]


@numba.njit(cache=True, nogil=True)
def _particle_energy(q, i, xi, yi, zi, L, r_wall, r_cut, r0_tab, dr_tab, tab):
    e = 0.0
    for j in range(q.shape[0]):
        if j == i:
            continue
        dx = xi - q[j, 0]
        dy = yi - q[j, 1]
        dz = zi - q[j, 2]
        dx -= L * np.round(dx / L)
        dy -= L * np.round(dy / L)
        dz -= L * np.round(dz / L)
        e += _table_energy(np.sqrt(dx * dx + dy * dy + dz * dz), r_wall, r_cut, r0_tab, dr_tab, tab)
    return e


@numba.njit(cache=True, nogil=True)
def _sweeps(q, L, beta, step, n_sweeps, u_prop, u_acc, r_wall, r_cut, r0_tab, dr_tab, tab, adapt, step_cap):
    """Sequential single-particle Metropolis sweeps; returns (step, accepted, attempted)."""
    m = q.shape[0]
    acc_total = 0
    for s in range(n_sweeps):
        acc = 0
        for i in range(m):
            row = s * m + i
            xo, yo, zo = q[i, 0], q[i, 1], q[i, 2]
            xn = xo + step * (2.0 * u_prop[row, 0] - 1.0)
            yn = yo + step * (2.0 * u_prop[row, 1] - 1.0)
            zn = zo + step * (2.0 * u_prop[row, 2] - 1.0)
            xn -= L * np.floor(xn / L)
            yn -= L * np.floor(yn / L)
            zn -= L * np.floor(zn / L)
            if xn >= L:
                xn = 0.0
            if yn >= L:
                yn = 0.0
            if zn >= L:
                zn = 0.0
            de = _particle_energy(q, i, xn, yn, zn, L, r_wall, r_cut, r0_tab, dr_tab, tab) - _particle_energy(
                q, i, xo, yo, zo, L, r_wall, r_cut, r0_tab, dr_tab, tab
            )
            if de <= 0.0 or u_acc[row] < np.exp(-beta * de):
                q[i, 0] = xn
                q[i, 1] = yn
                q[i, 2] = zn
                acc += 1
        acc_total += acc
        if adapt:
            rate = acc / m
            step *= np.exp(rate - 0.4)
            if step > step_cap:
                step = step_cap
    return step, acc_total


def _lattice(m, L, r_wall):
    n = int(np.ceil(m ** (1.0 / 3.0) - 1e-12))
    a = L / n
    if a <= r_wall:
        raise ConfigurationError(f"box too small: lattice spacing {a:.4g} <= hard-core radius {r_wall}")
    g = (np.arange(n) + 0.5) * a
    pts = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    return pts[:m].copy()


def _exact_forces(q, L, basis, theta, cutoff, force_noise, rng):
    cfg = ParticleConfig(q, np.zeros_like(q), L)
    pl = neighbor_pairs(cfg, cutoff)
    f = np.zeros_like(cfg.positions)
    if len(pl):
        mag = -(design_matrix_deriv(basis, pl.r) @ theta)  # -u'(r)
        vec = mag[:, None] * pl.unit
        if force_noise > 0:
            vec = vec + force_noise * rng.standard_normal(vec.shape)
        np.add.at(f, pl.i, vec)
        np.add.at(f, pl.j, -vec)
    return ParticleConfig(cfg.positions, f, L)


@dataclass(frozen=True)
class ChainStats:
    step: float
    acceptance: float


def synth_pair_data(theta_true, basis: BasisSet, m: int = DEFAULT_M, box_length: Optional[float] = None,
                    n_configs: int = 200, temperature_like: float = 1.0, seed: int = 0,
                    cutoff: Optional[float] = None, force_noise: float = 1.0,
                    configs_per_chain: int = CONFIGS_PER_CHAIN, decorrelation_sweeps: int = DECORRELATION_SWEEPS,
                    equilibration_sweeps: int = EQUILIBRATION_SWEEPS, threads: int = 1, return_stats: bool = False):
    """Sample configurations by Metropolis Monte Carlo under ``u(r; theta_true)``.

    The pair potential is the spline itself (tabulated finely for the
    sampler), with a hard core below the basis lower bound and zero beyond the
    cutoff. Independent chains each produce ``configs_per_chain``
    configurations separated by ``decorrelation_sweeps`` sweeps of ``m``
    single-particle moves. Chain ``c`` draws from stream ``(seed, 0, c)``.

    Forces are the exact pair forces ``-u'(r) u_IJ``. With ``force_noise > 0``
    every pair force additionally receives an independent Gaussian vector of
    that standard deviation per component, applied with opposite signs to the
    two beads (stream ``(seed, 1, config)``); this mimics the fluctuation of
    the instantaneous force around the mean force and keeps the total force
    of each configuration at zero.

    Raises
    ------
    TuningError
        If the Metropolis acceptance rate after step tuning lies outside
        [0.1, 0.9] while the step is below its cap of half the box.
    """
    theta_true = np.asarray(theta_true, dtype=float)
    if not basis.is_spline:
        raise UnsupportedBasisError("synthetic pair data needs a B-spline basis")
    if theta_true.size != basis.K:
        raise ArgumentError("theta_true length does not match basis")
    r_wall, r_cut_basis = basis.domain
    cutoff = r_cut_basis if cutoff is None else float(cutoff)
    L = box_for_density(m) if box_length is None else float(box_length)
    if cutoff > L / 2:
        raise ConfigurationError(f"cutoff {cutoff} exceeds half the box length {L / 2}")
    if n_configs < 1 or m < 2 or temperature_like <= 0 or force_noise < 0:
        raise ArgumentError("need n_configs >= 1, m >= 2, temperature_like > 0, force_noise >= 0")
    tab_r = np.linspace(r_wall, cutoff, 20001)
    tab = pair_potential(basis, theta_true, tab_r)
    dr = tab_r[1] - tab_r[0]
    beta = 1.0 / temperature_like
    step_cap = L / 2
    n_chains = -(-n_configs // configs_per_chain)

    def chain(c):
        rng = stream(seed, 0, c)
        n_here = min(configs_per_chain, n_configs - c * configs_per_chain)
        q = _lattice(m, L, r_wall)
        q += 1e-3 * (rng.random(q.shape) - 0.5)
        q = np.mod(q, L)
        n_eq = equilibration_sweeps
        step, _ = _sweeps(q, L, beta, 0.1, n_eq, rng.random((n_eq * m, 3)), rng.random(n_eq * m),
                          r_wall, cutoff, r_wall, dr, tab, True, step_cap)
        out, accepted, attempted = [], 0, 0
        for _ in range(n_here):
            n_s = decorrelation_sweeps
            _, acc = _sweeps(q, L, beta, step, n_s, rng.random((n_s * m, 3)), rng.random(n_s * m),
                             r_wall, cutoff, r_wall, dr, tab, False, step_cap)
            accepted += acc
            attempted += n_s * m
            out.append(q.copy())
        rate = accepted / attempted
        if not (ACCEPTANCE_RANGE[0] <= rate <= ACCEPTANCE_RANGE[1]) and step < step_cap * (1 - 1e-9):
            raise TuningError(f"chain {c}: acceptance {rate:.3f} outside {ACCEPTANCE_RANGE} at step {step:.4g}")
        return out, ChainStats(float(step), float(rate))

    results = run_indexed(chain, n_chains, threads)
    positions = [q for qs, _ in results for q in qs]
    configs = run_indexed(
        lambda i: _exact_forces(positions[i], L, basis, theta_true, cutoff, force_noise, stream(seed, 1, i)),
        len(positions), threads,
    )
    if return_stats:
        return configs, [s for _, s in results]
    return configs


def pair_correlation(configs: Sequence[ParticleConfig], r_max: float, n_bins: int = 50):
    """Radial distribution function ``g(r)`` histogram; returns (bin centres, g)."""
    edges = np.linspace(0.0, r_max, n_bins + 1)
    hist = np.zeros(n_bins)
    for c in configs:
        hist += np.histogram(neighbor_pairs(c, r_max).r, bins=edges)[0]
    c0 = configs[0]
    rho = c0.m / c0.box_length ** 3
    shell = 4.0 / 3.0 * np.pi * (edges[1:] ** 3 - edges[:-1] ** 3)
    ideal = 0.5 * c0.m * rho * shell * len(configs)
    return 0.5 * (edges[1:] + edges[:-1]), hist / ideal


# ---------------------------------------------------------------------------
# Uncertainty bands


@dataclass(frozen=True)
class PotentialBand:
    """Pointwise uncertainty of a fitted pair potential on ``grid``."""

    grid: np.ndarray
    estimate: np.ndarray
    report: object
    bootstrap_std: np.ndarray
    jackknife_std: np.ndarray
    replicate_mean: np.ndarray
    theta_hat: np.ndarray
    n_configs: int
    n_failed: int = 0
    extra: dict = field(default_factory=dict, compare=False)


def potential_band(configs, basis: BasisSet, cutoff: float = DEFAULT_CUTOFF, B: int = DEFAULT_B, alpha: float = 0.05,
                   grid=None, seed: int = 0, threads: int = 1, jackknife: bool = True) -> PotentialBand:
    """Bootstrap-over-configurations band for ``u(r; theta)``.

    Returns the percentile band (``report``), the pointwise bootstrap STD
    and, when ``jackknife`` is set, the pointwise jackknife STD.
    """
    blocks = configs if isinstance(configs, PairFmBlocks) else pair_blocks(configs, basis, cutoff, threads)
    grid = np.linspace(basis.domain[0], basis.domain[1], 200) if grid is None else np.asarray(grid, dtype=float)
    Phi = design_matrix(basis, grid)
    theta_hat = fit_pair_potential(blocks, basis, cutoff).theta

    def estimator(b):
        return solve_pair_system(b.system())

    reps = bootstrap(blocks, estimator, B=B, seed=seed, threads=threads)
    curves = reps.thetas @ Phi.T
    report = qoi_bootstrap_ci(reps, lambda th: Phi @ th, alpha, grid, theta_hat)
    jk_std = np.full(grid.size, np.nan)
    if jackknife:
        loo = jackknife_replicates(blocks, estimator, threads)
        jk_std = np.sqrt(jackknife_variance(loo @ Phi.T))
    return PotentialBand(grid, Phi @ theta_hat, report, curves.std(axis=0), jk_std, curves.mean(axis=0), theta_hat,
                         len(blocks), reps.n_failed)
