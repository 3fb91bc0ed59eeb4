import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from conftest import random_theta
from magnetostrophic.errors import InvalidArgument
from magnetostrophic.metrics import (
    EmpiricalMeasure,
    MetricParams,
    assignment_cost,
    brute_force_assignment,
    coordinate_observable,
    default_eta,
    lift,
    observable_seminorm,
    project,
    rho_bounds,
    rho_star,
    rho_star_constant,
    rho_tilde,
    symbol_constants,
    wasserstein,
)
from magnetostrophic.noise import NoiseConfig, default_noise
from magnetostrophic.spectral import PARSEVAL, PhysParams, SpectralScalar, apply_constitutive, make_grid, norm

G = make_grid(8)
P = PhysParams()


def _cos(k, amp=1.0):
    from magnetostrophic.noise import sigma_field

    return SpectralScalar(amp * sigma_field(k, 0, G), G)


def test_metric_params_validation():
    with pytest.raises(InvalidArgument):
        MetricParams(0.0)
    with pytest.raises(InvalidArgument):
        MetricParams(0.1, n_quad=1)


def test_default_eta():
    s2 = 6 * PARSEVAL / 2  # six unit modes, each contributing its mean square
    assert default_eta(P, default_noise()) == pytest.approx(P.kappa**2 * P.nu / (4 * s2), rel=1e-12)
    assert default_eta(P, NoiseConfig(())) == 0.05


def test_segment_from_origin_matches_quadrature():
    mp = MetricParams(0.01, n_quad=2049)
    b = _cos((1, 0, 0), 0.4)
    c = norm(b) ** 2
    lo, path, up = rho_bounds(SpectralScalar(np.zeros(G.shape, complex), G), b, mp)
    exact = quad(lambda t: math.exp(mp.eta * c * t * t), 0, 1)[0] * math.sqrt(c)
    assert lo == pytest.approx(math.sqrt(c), rel=1e-12)
    assert path == pytest.approx(exact, rel=1e-6)
    assert up == pytest.approx(math.exp(2 * mp.eta * c) * math.sqrt(c), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10**6), st.floats(1e-4, 0.05))
def test_bounds_ordered_and_symmetric(s1, s2, eta):
    mp = MetricParams(eta)
    a, b = 0.1 * random_theta(G, s1), 0.1 * random_theta(G, s2)
    lo, path, up = rho_bounds(a, b, mp)
    assert lo <= path <= up
    assert rho_bounds(b, a, mp) == pytest.approx((lo, path, up), rel=1e-12)
    assert rho_bounds(a, a, mp) == (0.0, 0.0, 0.0)


def test_triangle_inequality_for_upper_path_segment():
    mp = MetricParams(0.01)
    a, b, c = (0.05 * random_theta(G, s) for s in (1, 2, 3))
    lo_ac = rho_bounds(a, c, mp)[0]
    assert lo_ac <= rho_bounds(a, b, mp)[0] + rho_bounds(b, c, mp)[0] + 1e-12


def test_upper_grows_with_eta():
    a, b = 0.2 * random_theta(G, 4), 0.2 * random_theta(G, 5)
    ups = [rho_bounds(a, b, MetricParams(e))[2] for e in (1e-4, 1e-3, 1e-2)]
    paths = [rho_bounds(a, b, MetricParams(e))[1] for e in (1e-4, 1e-3, 1e-2)]
    assert ups[0] < ups[1] < ups[2]
    assert paths[0] < paths[1] < paths[2]


def test_lift_and_project():
    th = random_theta(G, 6)
    U, B, T = lift(th, P)
    u, b = apply_constitutive(th, P)
    assert np.allclose(U.coeffs, u.coeffs) and np.allclose(B.coeffs, b.coeffs)
    assert project((U, B, T)) is th


def test_rho_tilde_of_lift_equals_rho_star():
    mp = MetricParams(0.01)
    a, b = random_theta(G, 7), random_theta(G, 8)
    assert rho_tilde(lift(a, P), lift(b, P), mp) == rho_star(a, b, P, mp)
    with pytest.raises(InvalidArgument):
        rho_tilde(lift(a, P), lift(b, P), mp, bound_kind="middle")


def test_rho_star_sandwich():
    mp = MetricParams(0.01)
    C = rho_star_constant(P)
    for s in range(20):
        a, b = 0.1 * random_theta(G, 100 + s), 0.1 * random_theta(G, 200 + s)
        for kind, i in (("lower", 0), ("path_upper", 1), ("upper", 2)):
            r = rho_bounds(a, b, mp)[i]
            rs = rho_star(a, b, P, mp, kind)
            assert r <= rs <= C * r


def test_symbol_constants_are_attained_and_stable():
    c32 = symbol_constants(P, 32)
    assert c32["Mu_H1"] >= symbol_constants(P, 4)["Mu_H1"]
    assert rho_star_constant(P, 64) == pytest.approx(rho_star_constant(P, 32), rel=1e-2)


def test_assignment_matches_brute_force():
    rng = np.random.default_rng(3)
    for n in range(1, 7):
        cost = rng.random((n, n))
        w, perm = assignment_cost(cost)
        assert w == pytest.approx(brute_force_assignment(cost), abs=1e-14)
        assert sorted(perm) == list(range(n))
    with pytest.raises(InvalidArgument):
        brute_force_assignment(np.zeros((9, 9)))


def test_wasserstein_of_permuted_samples_is_zero():
    mp = MetricParams(0.01)
    th = 0.1 * random_theta(G, 9, batch=(6,))
    mu = EmpiricalMeasure(th)
    nu = mu.subset([3, 1, 5, 0, 2, 4])
    res = wasserstein(mu, nu, "rho", mp)
    assert res.upper == pytest.approx(0.0, abs=1e-12)
    assert list(res.perm_upper) == [3, 1, 4, 0, 5, 2]


def test_wasserstein_bracket_and_errors():
    mp = MetricParams(0.01)
    mu = EmpiricalMeasure(0.1 * random_theta(G, 10, batch=(5,)))
    nu = EmpiricalMeasure(0.1 * random_theta(G, 11, batch=(5,)))
    res = wasserstein(mu, nu, "rho", mp)
    assert res.lower <= res.path <= res.upper
    star = wasserstein(mu, nu, "rho-star", mp, P)
    assert star.lower >= res.lower
    assert wasserstein(mu.lifted(P), nu.lifted(P), "rho-tilde", mp).upper == pytest.approx(star.upper, rel=1e-12)
    with pytest.raises(InvalidArgument):
        wasserstein(mu, nu, "rho-tilde", mp)
    with pytest.raises(InvalidArgument):
        wasserstein(mu, nu, "rho-star", mp)
    with pytest.raises(InvalidArgument):
        wasserstein(mu, nu.subset([0, 1]), "rho", mp)
    with pytest.raises(InvalidArgument):
        wasserstein(mu, nu, "l2", mp)


def test_split_halves():
    mu = EmpiricalMeasure(random_theta(G, 12, batch=(7,)))
    a, b = mu.split()
    assert a.size == b.size == 3


def test_coordinate_observable_values_and_lipschitz():
    phi = coordinate_observable("theta", (1, 0, 0), 0)
    mu = EmpiricalMeasure(SpectralScalar(_cos((1, 0, 0)).coeffs[None], G))
    assert phi(mu)[0] == pytest.approx(PARSEVAL / 2)
    lip = observable_seminorm("theta", (1, 0, 0))
    a = random_theta(G, 13, batch=(4,))
    b = random_theta(G, 14, batch=(4,))
    diff = np.abs(phi(EmpiricalMeasure(a)) - phi(EmpiricalMeasure(b)))
    dist = np.array([norm(SpectralScalar(a.coeffs[i] - b.coeffs[i], G)) for i in range(4)])
    assert np.all(diff <= lip * dist + 1e-12)
    psi = coordinate_observable("u", (1, 1, 0), 1, component=2)
    la, lb = EmpiricalMeasure(a).lifted(P), EmpiricalMeasure(b).lifted(P)
    du = np.abs(psi(la) - psi(lb))
    lip_u = observable_seminorm("u", (1, 1, 0))
    h1 = [math.sqrt(np.sum(np.abs(la.U.coeffs[i] - lb.U.coeffs[i]) ** 2 * G.k2) * PARSEVAL) for i in range(4)]
    assert np.all(du <= lip_u * np.array(h1) + 1e-12)
    with pytest.raises(InvalidArgument):
        psi(EmpiricalMeasure(a))
