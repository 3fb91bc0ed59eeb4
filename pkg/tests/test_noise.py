import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import grid_points
from magnetostrophic.errors import InvalidArgument
from magnetostrophic.noise import (
    NoiseConfig,
    NoiseEntry,
    default_noise,
    sample_half_sparse,
    sample_increment,
    sample_increments,
    sigma_field,
    sigma_norm,
    standard_normals,
)
from magnetostrophic.spectral import SpectralScalar, from_half, make_grid, norm


def test_entry_validation():
    with pytest.raises(InvalidArgument):
        NoiseEntry((0, 0, 0), 0)
    with pytest.raises(InvalidArgument):
        NoiseEntry((-1, 0, 0), 0)
    with pytest.raises(InvalidArgument):
        NoiseEntry((1, 0, 0), 2)
    with pytest.raises(InvalidArgument):
        NoiseConfig((NoiseEntry((1, 0, 0), 0), NoiseEntry((1, 0, 0), 0, 2.0)))


def test_default_configuration():
    cfg = default_noise()
    assert {(e.k, e.m) for e in cfg.entries} == {(k, m) for k in ((1, 0, 0), (0, 1, 0), (0, 0, 1)) for m in (0, 1)}
    assert all(e.alpha == 1.0 for e in cfg.entries)


def test_sigma_field_matches_grid_values(grid8):
    X, Y, Z = grid_points(8)
    cos = SpectralScalar(sigma_field((1, 2, 0), 0, grid8), grid8).physical()
    sin = SpectralScalar(sigma_field((1, 2, 0), 1, grid8), grid8).physical()
    assert np.allclose(cos, np.cos(X + 2 * Y), atol=1e-14)
    assert np.allclose(sin, np.sin(X + 2 * Y), atol=1e-14)


def test_sigma_norm_single_entry(grid8):
    cfg = NoiseConfig((NoiseEntry((1, 0, 0), 0, 1.0),))
    expected = norm(SpectralScalar(sigma_field((1, 0, 0), 0, grid8), grid8))
    assert sigma_norm(cfg) == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize("p", [2.0, 3.0, 4.5, 8.0])
def test_sigma_norm_constant_density(p):
    a = 0.7
    cfg = NoiseConfig((NoiseEntry((1, 0, 0), 0, a), NoiseEntry((1, 0, 0), 1, a)))
    assert sigma_norm(cfg, p) == pytest.approx((2 * math.pi) ** (3 / p) * a, rel=1e-12)


def test_sigma_norm_edge_cases():
    assert sigma_norm(NoiseConfig(())) == 0.0
    with pytest.raises(InvalidArgument):
        sigma_norm(default_noise(), 1.5)
    # Hilbert-Schmidt value at p = 2: six modes of norm^2 (2 pi)^3 / 2
    assert sigma_norm(default_noise(0.5)) == pytest.approx(0.5 * math.sqrt(6 * (2 * math.pi) ** 3 / 2), rel=1e-13)


def test_determinism_and_support():
    cfg = default_noise(seed=42)
    g = make_grid(8)
    a = sample_increment(cfg, 0.01, 5, 3, g)
    b = sample_increment(cfg, 0.01, 5, 3, g)
    assert np.array_equal(a.coeffs, b.coeffs)
    c = sample_increment(cfg, 0.01, 6, 3, g)
    assert not np.array_equal(a.coeffs, c.coeffs)
    support = np.zeros(g.shape, bool)
    for e in cfg.entries:
        support[g.index_of(e.k)] = True
        support[g.index_of(tuple(-x for x in e.k))] = True
    assert np.all(a.coeffs[~support] == 0)
    assert a.coeffs[0, 0, 0] == 0
    phys = np.fft.ifftn(a.coeffs) * 8**3
    assert np.max(np.abs(phys.imag)) <= 1e-14


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**40), st.integers(0, 10**6), st.integers(1, 40), st.integers(0, 39))
def test_batches_do_not_change_draws(step, start, count, pick):
    cfg = default_noise(seed=7)
    pick = pick % count
    batch = standard_normals(cfg, step, start, count)
    single = standard_normals(cfg, step, start + pick, 1)
    assert np.array_equal(batch[pick], single[0])


def test_half_sparse_matches_dense(grid8):
    cfg = default_noise(seed=3)
    cols, vals = sample_half_sparse(cfg, grid8, 0.02, 11, 5, 4)
    half = np.zeros((4, grid8.n * grid8.n * grid8.nh), complex)
    half[:, cols] = vals
    full = from_half(half.reshape(4, grid8.n, grid8.n, grid8.nh), 8)
    dense = sample_increments(cfg, grid8, 0.02, 11, 5, 4)
    assert np.allclose(full, dense, atol=1e-16)


def test_increment_variance_and_independence(grid8):
    alpha, dt, n_draws = 0.8, 0.01, 100_000
    cfg = NoiseConfig((NoiseEntry((1, 0, 0), 0, alpha), NoiseEntry((0, 1, 0), 1, alpha)), seed=9)
    inc = sample_increments(cfg, grid8, dt, 17, 0, n_draws)
    coord = 2 * inc[:, 1, 0, 0].real  # cos coefficient of the e1 entry
    var = coord.var()
    se = var * math.sqrt(2 / (n_draws - 1))
    assert abs(var - alpha**2 * dt) <= 3 * se
    nxt = 2 * sample_increments(cfg, grid8, dt, 18, 0, n_draws)[:, 1, 0, 0].real
    corr = np.corrcoef(coord, nxt)[0, 1]
    assert abs(corr) <= 3 / math.sqrt(n_draws)
    other = -2 * inc[:, 0, 1, 0].imag  # sin coefficient of the e2 entry
    assert abs(np.corrcoef(coord, other)[0, 1]) <= 3 / math.sqrt(n_draws)


def test_normals_are_standard():
    z = standard_normals(default_noise(seed=1), 0, 0, 200_000)
    assert abs(z.mean()) < 4 / math.sqrt(z.size)
    assert abs(z.var() - 1) < 4 * math.sqrt(2 / z.size)
