import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import grid_points, random_theta
from magnetostrophic.errors import InvalidArgument
from magnetostrophic.spectral import (
    PARSEVAL,
    PhysParams,
    SpectralScalar,
    SpectralVector,
    advect,
    apply_constitutive,
    apply_Q_inverse_drive,
    apply_R,
    from_half,
    inner,
    leray_project,
    make_grid,
    multiplier_tables,
    norm,
    symbol_D,
    symbol_Mu,
    to_half,
    to_physical,
    to_spectral,
)

lattice = st.tuples(*[st.integers(-6, 6)] * 3).filter(any)


def test_grid_rejects_bad_sizes():
    for n in (3, 2, 7, 0):
        with pytest.raises(InvalidArgument):
            make_grid(n)


def test_grid_masks():
    g = make_grid(8)
    kept = {tuple(int(c) for c in g.kvec[:, i, j, l]) for i, j, l in zip(*np.nonzero(g.mask))}
    assert max(max(abs(c) for c in k) for k in kept) == 2
    assert (0, 0, 0) not in kept
    assert len(kept) == 5**3 - 1
    assert not make_grid(4).mask[0, 0, 0]


def test_transform_round_trip():
    g = make_grid(16)
    rng = np.random.default_rng(1)
    values = rng.standard_normal(g.shape)
    back = to_physical(to_spectral(values), 16)
    assert np.max(np.abs(back - values)) <= 1e-12 * np.max(np.abs(values))


def test_half_layout_round_trip(grid8):
    th = random_theta(grid8, 3, dealias=False)
    assert np.allclose(from_half(to_half(th.coeffs), 8), th.coeffs, atol=1e-15)


def test_reality_of_constitutive_output(grid8, params):
    th = random_theta(grid8, 2)
    u, b = apply_constitutive(th, params)
    for f in (u, b):
        phys = np.fft.ifftn(f.coeffs, axes=(-3, -2, -1)) * 8**3
        assert np.max(np.abs(phys.imag)) <= 1e-12 * np.max(np.abs(phys.real))


def test_leray_projection():
    g = make_grid(8)
    rng = np.random.default_rng(4)
    v = SpectralVector.from_physical(rng.standard_normal((3,) + g.shape), g)
    pv = leray_project(v)
    div = np.sum(g.kvec * pv.coeffs, axis=0)
    assert np.max(np.abs(div)) <= 1e-12 * norm(pv)
    again = leray_project(pv)
    assert np.max(np.abs(again.coeffs - pv.coeffs)) <= 1e-14 * np.max(np.abs(pv.coeffs))
    grad = SpectralVector(g.ik * random_theta(g, 5).coeffs[None], g)
    assert norm(leray_project(grad)) <= 1e-13 * norm(grad)


def test_symbol_hand_values():
    p = PhysParams(nu=0.1, b0_hat=(1.0, 0.0, 0.0), lambda_colat=0.7)
    assert symbol_D((1, 0, 0), p) == pytest.approx(1.21, rel=1e-14)
    assert np.allclose(symbol_Mu((1, 0, 0), p), [0.0, 0.0, 1 / 1.1], atol=1e-15)
    q = PhysParams(nu=1.0, lambda_colat=0.0, b0_hat=(0.0, 0.0, 1.0))
    assert symbol_D((0, 0, 1), q) == pytest.approx(5.0, rel=1e-14)
    assert np.all(symbol_Mu((0, 0, 1), PhysParams()) == 0)
    with pytest.raises(InvalidArgument):
        symbol_D((0, 0, 0), p)


def test_omega_hat_is_unit_with_zero_first_component():
    for lam in (0.0, 0.3, math.pi / 4, 2.0):
        om = PhysParams(lambda_colat=lam).omega_hat
        assert om[0] == 0.0
        assert abs(np.linalg.norm(om) - 1) <= 1e-12


def test_params_validation():
    with pytest.raises(InvalidArgument):
        PhysParams(eps=0.0)
    with pytest.raises(InvalidArgument):
        PhysParams(b0_hat=(1.0, 1.0, 0.0))


@given(lattice)
def test_symbol_even_and_solenoidal(k):
    p = PhysParams()
    km = tuple(-c for c in k)
    assert symbol_D(k, p) > 0
    assert symbol_D(k, p) == pytest.approx(symbol_D(km, p), rel=1e-14)
    M = symbol_Mu(k, p)
    assert np.allclose(M, symbol_Mu(km, p), atol=1e-15)
    assert abs(np.dot(M, k)) <= 1e-13 * max(1.0, np.linalg.norm(M) * np.linalg.norm(k))


def test_constitutive_matches_q_solve():
    g = make_grid(16)
    p = PhysParams()
    th = random_theta(g, 6, batch=(10,))
    u, _ = apply_constitutive(th, p)
    v = apply_Q_inverse_drive(th, p)
    rel = norm(u - v) / norm(u)
    assert np.max(rel) <= 1e-10


def test_constitutive_special_cases(grid8, params):
    X, Y, Z = grid_points(8)
    th = SpectralScalar.from_physical(np.cos(Z), grid8)
    u, b = apply_constitutive(th, params)
    assert np.max(np.abs(u.coeffs)) == 0 and np.max(np.abs(b.coeffs)) == 0
    assert np.max(np.abs(apply_Q_inverse_drive(th, params).coeffs)) <= 1e-15
    # B0 = e3 and k in the horizontal plane: b vanishes, u does not
    th = SpectralScalar.from_physical(np.cos(X + Y), grid8)
    u, b = apply_constitutive(th, params)
    assert norm(u) > 0.1 and np.max(np.abs(b.coeffs)) == 0
    th = SpectralScalar.from_physical(np.cos(Y), grid8)
    assert np.max(np.abs(apply_R(th, params).coeffs)) == 0


def test_apply_R_equals_b_and_decays(grid8, params):
    th = random_theta(grid8, 7)
    _, b = apply_constitutive(th, params)
    assert np.array_equal(apply_R(th, params).coeffs, b.coeffs)
    t = multiplier_tables(make_grid(32), params)
    g = make_grid(32)
    ratio = np.linalg.norm(t.Mb_factor * t.Mu, axis=0) * g.k2**1.5
    assert np.max(ratio) < 10.0


def test_q_solve_linear(grid8, params):
    th = random_theta(grid8, 8)
    a = apply_Q_inverse_drive(th * 3.5, params)
    b = apply_Q_inverse_drive(th, params) * 3.5
    assert np.allclose(a.coeffs, b.coeffs, atol=1e-14)


def test_advection_properties(grid8, params):
    th = random_theta(grid8, 9)
    zero = SpectralVector.zeros(grid8)
    assert np.max(np.abs(advect(zero, th).coeffs)) == 0
    u, _ = apply_constitutive(random_theta(grid8, 10), params)
    adv = advect(u, th)
    assert abs(inner(adv, th)) <= 1e-10 * norm(adv) * norm(th)
    assert adv.coeffs[0, 0, 0] == 0


def test_advection_single_modes(grid8):
    X, Y, Z = grid_points(8)
    zeros = np.zeros_like(X)
    v = SpectralVector.from_physical(np.stack([zeros, zeros, np.cos(X)]), grid8)
    s = SpectralScalar.from_physical(np.sin(Z + Y), grid8)
    out = advect(v, s)
    support = {tuple(int(c) for c in grid8.kvec[:, i, j, l]) for i, j, l in zip(*np.nonzero(np.abs(out.coeffs) > 1e-12))}
    allowed = {(1, 1, 1), (-1, -1, -1), (1, -1, -1), (-1, 1, 1)}
    assert support and support <= allowed


def test_norm_of_cosine(grid8):
    X, Y, Z = grid_points(8)
    f = SpectralScalar.from_physical(np.cos(X + 2 * Z), grid8)
    expected = (2 * np.pi) ** 1.5 / math.sqrt(2)
    assert norm(f) == pytest.approx(expected, rel=1e-13)
    assert norm(f, "Lp", p=2.0) == pytest.approx(expected, rel=1e-12)
    assert norm(f, "Hs", 1.0) == pytest.approx(math.sqrt(5) * expected, rel=1e-13)
    zero = SpectralScalar.zeros(grid8)
    assert norm(zero) == norm(zero, "Hs", 1.0) == norm(zero, "Lp", p=3.0) == 0.0


def test_parseval_against_quadrature():
    g = make_grid(16)
    th = random_theta(g, 11, dealias=False)
    quad = math.sqrt(g.cell_volume * np.sum(th.physical() ** 2))
    assert norm(th) == pytest.approx(quad, rel=1e-10)
    assert PARSEVAL == pytest.approx((2 * np.pi) ** 3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3))
def test_constitutive_linear_property(seed, c):
    g = make_grid(8)
    p = PhysParams()
    th = random_theta(g, seed)
    u1, b1 = apply_constitutive(th * c, p)
    u2, b2 = apply_constitutive(th, p)
    assert np.allclose(u1.coeffs, c * u2.coeffs, atol=1e-13)
    assert np.allclose(b1.coeffs, c * b2.coeffs, atol=1e-13)
