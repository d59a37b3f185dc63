import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cguq.core import BasisSet
from cguq.exceptions import ArgumentError, ConditioningError, ConfigurationError, UnsupportedBasisError
from cguq.pairfm import (
    PairFmBlocks,
    ParticleConfig,
    assemble_pair_fm,
    box_for_density,
    default_pair_basis,
    fit_pair_potential,
    gauge_fix,
    generator_theta,
    minimum_image,
    morse_potential,
    neighbor_pairs,
    pair_blocks,
    pair_correlation,
    pair_design,
    pair_potential,
    potential_band,
    synth_pair_data,
)


def brute_pairs(q, L, cutoff):
    out = {}
    for i, j in itertools.combinations(range(q.shape[0]), 2):
        d = minimum_image(q[i] - q[j], L)
        r = np.linalg.norm(d)
        if 0 < r <= cutoff:
            out[(i, j)] = r
    return out


def config(q, L, f=None):
    q = np.asarray(q, dtype=float)
    return ParticleConfig(q, np.zeros_like(q) if f is None else f, L)


@pytest.fixture(scope="module")
def basis():
    return default_pair_basis()


@pytest.fixture(scope="module")
def melt200(basis):
    theta = generator_theta(basis)
    return theta, synth_pair_data(theta, basis, n_configs=200, seed=1)


# ------------------------------------------------------------ neighbour list


def test_single_pair():
    pl = neighbor_pairs(config([[1.0, 1.0, 1.0], [1.5, 1.0, 1.0]], 10.0), 1.4)
    assert len(pl) == 1 and pl.r[0] == pytest.approx(0.5)
    assert np.allclose(pl.unit[0], [-1.0, 0.0, 0.0])


def test_minimum_image_wrap():
    pl = neighbor_pairs(config([[0.1, 0.0, 0.0], [9.9, 0.0, 0.0]], 10.0), 1.4)
    assert len(pl) == 1 and pl.r[0] == pytest.approx(0.2)


@pytest.mark.parametrize("L", [3.0, 10.0])
def test_neighbor_list_matches_all_pairs(L, rng):
    for _ in range(5):
        q = rng.random((50, 3)) * L
        c = config(q, L)
        pl = neighbor_pairs(c, 1.4)
        ref = brute_pairs(c.positions, L, 1.4)
        got = {(int(i), int(j)): r for i, j, r in zip(pl.i, pl.j, pl.r)}
        assert got.keys() == ref.keys()
        assert all(abs(got[k] - ref[k]) < 1e-12 for k in ref)


def test_cutoff_too_large():
    with pytest.raises(ConfigurationError):
        neighbor_pairs(config(np.eye(3), 2.0), 1.4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.tuples(*[st.floats(-20, 20)] * 3))
def test_neighbor_list_translation_invariant(seed, shift):
    q = np.random.default_rng(seed).random((30, 3)) * 6.0
    a = neighbor_pairs(config(q, 6.0), 1.4)
    b = neighbor_pairs(config(q + np.array(shift), 6.0), 1.4)
    assert np.array_equal(a.i, b.i) and np.array_equal(a.j, b.j)
    assert np.allclose(a.r, b.r, atol=1e-9)


def test_particle_config_validation():
    with pytest.raises(ArgumentError):
        ParticleConfig(np.zeros((1, 3)), np.zeros((1, 3)), 5.0)
    with pytest.raises(ArgumentError):
        ParticleConfig(np.zeros((2, 3)), np.zeros((3, 3)), 5.0)
    c = config([[-0.5, 11.0, 3.0], [0, 0, 0]], 10.0)
    assert np.allclose(c.positions[0], [9.5, 1.0, 3.0])


# ------------------------------------------------------------ assembly / fit


def test_single_pair_linear_hat():
    # degree-1 spline with K=2 on [0, 1.4]; gauge theta_2 = 0 leaves u = theta_1 (1 - r/1.4)
    basis = BasisSet.bspline(2, (0.0, 1.4), degree=1)
    f = 0.7
    q = np.array([[1.0, 1.0, 1.0], [1.6, 1.0, 1.0]])
    forces = np.array([[-f, 0, 0], [f, 0, 0]])  # repulsive along u_IJ (J -> I)
    est = fit_pair_potential([config(q, 10.0, forces)], basis, 1.4)
    assert est.theta[1] == 0.0
    assert est.theta[0] / 1.4 == pytest.approx(f, abs=1e-12)


def test_design_newton_third_law(melt200, basis):
    _, configs = melt200
    A, b = pair_design(configs[0], basis, 1.4)
    m = configs[0].m
    comp = A.reshape(m, 3, basis.K).sum(axis=0)
    assert np.allclose(comp, 0.0, atol=1e-10)
    assert b.shape == (3 * m,)


def test_noiseless_span_recovery(basis):
    theta = generator_theta(basis)
    configs = synth_pair_data(theta, basis, m=50, box_length=3.0, n_configs=20, seed=3, force_noise=0.0)
    est = fit_pair_potential(configs, basis)
    assert np.max(np.abs(gauge_fix(est.theta) - gauge_fix(theta))) < 1e-8


def test_blocks_match_full_assembly(melt200, basis):
    _, configs = melt200
    blocks = pair_blocks(configs[:10], basis, 1.4)
    full = assemble_pair_fm(configs[:10], basis, 1.4)
    assert np.allclose(blocks.system().gram, full.gram, rtol=1e-12, atol=1e-14)
    assert np.allclose(blocks.system().moment, full.moment, rtol=1e-12, atol=1e-14)
    assert len(blocks.take([0, 0, 3])) == 3
    g = full.gram
    assert np.allclose(g, g.T)
    assert np.linalg.eigvalsh(g).min() > -1e-10 * np.abs(g).max()


def test_empty_columns_named(melt200):
    _, configs = melt200
    wide = BasisSet.bspline(30, (0.0, 1.4), degree=3)
    with pytest.raises(ConditioningError) as info:
        fit_pair_potential(configs[:5], wide, 1.4)
    assert info.value.empty_columns and info.value.empty_columns[0] == 0


def test_basis_checks(melt200):
    _, configs = melt200
    with pytest.raises(UnsupportedBasisError):
        fit_pair_potential(configs[:2], BasisSet.monomial(4), 1.4)
    with pytest.raises(ArgumentError):
        fit_pair_potential(configs[:2], BasisSet.bspline(10, (0.35, 1.2)), 1.4)


def test_fit_recovers_minimum(melt200, basis):
    theta, configs = melt200
    est = fit_pair_potential(configs, basis)
    r = np.linspace(0.4, 1.4, 2001)
    u_hat = pair_potential(basis, est.theta, r)
    u_true = pair_potential(basis, theta, r)
    assert abs(r[np.argmin(u_hat)] - r[np.argmin(u_true)]) < 0.05
    # a single well: the sign of the slope changes once
    s = np.sign(np.diff(u_hat[r <= 1.0]))
    assert np.count_nonzero(np.diff(s[s != 0])) == 1


def test_more_configs_tighter(basis):
    theta = generator_theta(basis)
    big = synth_pair_data(theta, basis, n_configs=2000, seed=7)
    r = np.linspace(0.4, 1.4, 501)
    truth = pair_potential(basis, theta, r)
    err_big = np.max(np.abs(pair_potential(basis, fit_pair_potential(big, basis).theta, r) - truth))
    err_small = np.max(np.abs(pair_potential(basis, fit_pair_potential(big[:200], basis).theta, r) - truth))
    assert err_big < err_small


# ------------------------------------------------------------ generator


def test_ideal_gas(basis):
    ideal = BasisSet.bspline(30, (0.0, 1.4), degree=3)
    configs = synth_pair_data(np.zeros(30), ideal, n_configs=50, seed=2, force_noise=0.0)
    assert all(np.all(c.forces == 0.0) for c in configs)
    q = np.concatenate([c.positions for c in configs])
    L = configs[0].box_length
    # uniform marginals: each coordinate's mean near L/2 and variance near L^2/12
    assert np.allclose(q.mean(axis=0), L / 2, atol=0.05 * L)
    assert np.allclose(q.var(axis=0), L * L / 12, rtol=0.1)


def test_virial_and_depletion(melt200, basis):
    _, configs = melt200
    for c in configs[:20]:
        assert np.allclose(c.forces.sum(axis=0), 0.0, atol=1e-9)
    r, g = pair_correlation(configs[:50], 1.4, 28)
    assert np.all(g[r < 0.35] == 0.0) and np.all(g[(r > 0.35) & (r < 0.45)] < 0.5)
    assert g[np.argmin(np.abs(r - 0.65))] > 1.2
    assert abs(g[r > 1.2].mean() - 1.0) < 0.1


def test_generator_deterministic_across_threads(basis):
    theta = generator_theta(basis)
    a = synth_pair_data(theta, basis, n_configs=30, configs_per_chain=10, seed=5, threads=1)
    b = synth_pair_data(theta, basis, n_configs=30, configs_per_chain=10, seed=5, threads=3)
    assert all(np.array_equal(x.positions, y.positions) and np.array_equal(x.forces, y.forces) for x, y in zip(a, b))


def test_generator_validation(basis):
    theta = generator_theta(basis)
    with pytest.raises(ConfigurationError):
        synth_pair_data(theta, basis, m=20, box_length=2.0, n_configs=1)
    with pytest.raises(ArgumentError):
        synth_pair_data(theta[:-1], basis, n_configs=1)


def test_generator_helpers(basis):
    assert box_for_density(125) == pytest.approx(0.65 * (125 / 0.7) ** (1 / 3))
    assert morse_potential(1.4) == pytest.approx(0.0, abs=1e-15)
    r = np.linspace(0.35, 1.4, 400)
    err = pair_potential(basis, generator_theta(basis), r) - morse_potential(r)
    assert np.max(np.abs(err[r > 0.45])) < 0.02


# ------------------------------------------------------------ bands


def test_potential_band_patterns(melt200, basis):
    theta, configs = melt200
    blocks = pair_blocks(configs, basis, 1.4)
    assert isinstance(blocks, PairFmBlocks)
    B = 200
    band = potential_band(blocks, basis, B=B, seed=4)
    g = band.grid
    std = band.bootstrap_std
    assert std[(g >= 0.4) & (g <= 0.7)].mean() > std[(g >= 1.0) & (g <= 1.3)].mean()
    # linear estimator: replicate mean equals the estimate up to Monte Carlo error
    inner = g < 1.4 - 1e-9
    assert np.all(np.abs(band.replicate_mean - band.estimate)[inner] <= 3 * std[inner] / np.sqrt(B) + 1e-12)
    again = potential_band(blocks, basis, B=B, seed=4, threads=2, jackknife=False)
    assert np.array_equal(again.report.lower, band.report.lower)
    assert np.array_equal(again.report.upper, band.report.upper)
