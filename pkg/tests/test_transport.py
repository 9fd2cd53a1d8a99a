import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from onofri.densities import ModelDensity, theta
from onofri.functionals import ConstraintError, DensityFunction
from onofri.geometry import RadialGrid
from onofri.transport import (
    IllConditionedWarning,
    MonotoneRadialMap,
    SizeError,
    _inverse_cdf,
    cumulative_mass,
    discrete_ot_oracle,
    is_cyclically_monotone,
    lemma1_check,
    monge_ampere_residual,
    radial_brenier,
    random_radial_pair,
)

D2 = ModelDensity(2)
TH = theta(1.0, D2)


def _uniform(grid, mass=TH):
    c = mass / grid.volume()
    return DensityFunction.from_profile(lambda r: np.full_like(np.asarray(r, dtype=float), c), grid)


def _pair(k=128):
    g = RadialGrid.build(2, 1.0, k)
    return g, _uniform(g), DensityFunction.model(D2, g)


def test_cumulative_mass_matches_theta():
    r = np.array([0.1, 0.5, 1.0, 3.0])
    for n in (2, 3, 4):
        d = ModelDensity(n)
        assert_allclose(cumulative_mass(d.profile, n, r), [theta(x, d) for x in r], rtol=1e-12)


def test_identity_transport():
    g = RadialGrid.build(3, 1.5)
    rho = DensityFunction.model(ModelDensity(3), g)
    T = radial_brenier(rho, rho)
    assert_allclose(T.T, T.r, atol=1e-13)
    assert monge_ampere_residual(T, rho, rho) < 1e-12


def test_uniform_to_mu2_against_closed_form():
    # F0(r) = theta r^2 and F1(t) = t^2/(1+t^2), so t = sqrt(theta r^2 / (1 - theta r^2))
    g, uni, mu = _pair()
    T = radial_brenier(uni, mu)
    r = T.r
    assert_allclose(T.T, np.sqrt(TH * r * r / (1 - TH * r * r)), atol=1e-13)
    assert T.pushforward_error < 1e-8


def test_monge_ampere_residual_converges_at_second_order():
    res = []
    for k in (64, 128, 256):
        g, uni, mu = _pair(k)
        res.append(monge_ampere_residual(radial_brenier(uni, mu), uni, mu))
    assert res[1] < 1e-3 and res[2] < res[1]
    assert res[0] / res[1] > 3.5 and res[1] / res[2] > 3.5


def test_perturbed_map_has_larger_residual():
    g, uni, mu = _pair()
    T = radial_brenier(uni, mu)
    bumped = MonotoneRadialMap(T.r, np.minimum(np.asarray(T.T) + 0.01, 1.0), 1.0, 2)
    assert monge_ampere_residual(bumped, uni, mu) > monge_ampere_residual(T, uni, mu)


def test_inverse_map():
    g, uni, mu = _pair()
    fwd = radial_brenier(uni, mu)
    back = radial_brenier(mu, uni)
    assert np.max(np.abs(back(fwd.T) - fwd.r)) < 1e-6


def test_pushforward_at_random_thresholds(rng):
    g = RadialGrid.build(3, 2.0)
    rho0, rho1 = random_radial_pair(g, rng)
    fwd = radial_brenier(rho0, rho1)
    back = radial_brenier(rho1, rho0)
    t = rng.uniform(0.01, 2.0, size=20)
    lhs = cumulative_mass(rho1.profile, 3, t)
    rhs = cumulative_mass(rho0.profile, 3, back(t))
    assert_allclose(lhs, rhs, atol=1e-6)
    assert np.all(np.diff(fwd.T) >= 0) and fwd.T[-1] <= 2.0


def test_composition(rng):
    g = RadialGrid.build(2, 1.0, 64)
    a, b = random_radial_pair(g, rng)
    c = random_radial_pair(g, rng, mass=a.mass)[0]
    c = DensityFunction.from_profile(
        lambda r, p=c.profile, s=a.mass / c.mass: s * p(r), g)
    direct = radial_brenier(a, c)
    composed = radial_brenier(b, c)(radial_brenier(a, b).T)
    assert np.max(np.abs(direct.T - composed)) < 1e-6


def test_map_invariants_enforced():
    r = np.linspace(0.1, 1, 5)
    with pytest.raises(ValueError):
        MonotoneRadialMap(r, r[::-1], 1.0, 2)
    with pytest.raises(ValueError):
        MonotoneRadialMap(r, 2 * r, 1.0, 2)


def test_boundary_term_bounded(rng):
    g = RadialGrid.build(2, 1.7)
    T = radial_brenier(*random_radial_pair(g, rng))
    assert T.boundary_term() <= 1.7**2 + 1e-12


def test_map_csv_round_trip():
    g, uni, mu = _pair(32)
    T = radial_brenier(uni, mu)
    text = T.to_csv()
    assert text.startswith("r,T\n")
    back = MonotoneRadialMap.from_csv(text, 2, 1.0)
    assert np.array_equal(back.T, T.T) and np.array_equal(back.r, T.r)


def test_mass_mismatch():
    g, uni, mu = _pair(32)
    with pytest.raises(ConstraintError):
        radial_brenier(_uniform(g, 0.6), mu)


def test_vanishing_density_warns():
    g = RadialGrid.build(2, 1.0, 64)
    hollow = lambda r: np.maximum(np.asarray(r) - 0.3, 0.0) ** 2  # noqa: E731
    m = float(cumulative_mass(hollow, 2, 1.0)[0])
    rho1 = DensityFunction.from_profile(hollow, g)
    with pytest.warns(IllConditionedWarning, match="nodes"):
        radial_brenier(_uniform(g, m), rho1)


def test_lemma_equality_case():
    for n in (2, 3):
        g = RadialGrid.build(n, 1.0)
        mu = DensityFunction.model(ModelDensity(n), g)
        rep = lemma1_check(mu, mu)
        assert abs(rep.slack) < 1e-12


@pytest.mark.parametrize("n", [2, 3])
def test_lemma_inequality_random_pairs(n, rng):
    g = RadialGrid.build(n, 1.0)
    for _ in range(20):
        assert lemma1_check(*random_radial_pair(g, rng)).slack >= -1e-6


def test_lemma_uniform_to_model():
    g, uni, mu = _pair()
    rep = lemma1_check(uni, mu)
    assert_allclose(rep.lhs, math.sqrt(math.pi) * math.log(2), rtol=1e-12)
    assert rep.slack > 0


# ---------------------------------------------------------------- discrete oracle


def test_oracle_identical_clouds(rng):
    x = rng.normal(size=(6, 2))
    res = discrete_ot_oracle(x, x)
    assert res.pairing == tuple(range(6)) and res.cost == 0.0


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=7, unique=True),
       st.lists(st.floats(-10, 10), min_size=7, max_size=7, unique=True))
def test_oracle_one_dimensional_is_monotone(xs, ys):
    ys = ys[: len(xs)]
    x, y = np.array(xs), np.array(ys)
    res = discrete_ot_oracle(x, y)
    sorted_pairs = dict(zip(np.argsort(x), np.argsort(y)))
    monotone_cost = sum(0.5 * (x[i] - y[sorted_pairs[i]]) ** 2 for i in range(len(x))) / len(x)
    assert res.cost <= monotone_cost + 1e-12
    assert abs(res.cost - monotone_cost) < 1e-9 * max(1.0, monotone_cost)


def test_oracle_pairing_is_cyclically_monotone(rng):
    x, y = rng.normal(size=(7, 3)), rng.normal(size=(7, 3))
    res = discrete_ot_oracle(x, y)
    assert is_cyclically_monotone(x, y, res.pairing)
    worse = list(res.pairing)
    worse[0], worse[1] = worse[1], worse[0]
    cost = 0.5 * np.mean(np.sum((x - y[worse]) ** 2, axis=1))
    assert cost >= res.cost


def test_oracle_size_guard():
    with pytest.raises(SizeError):
        discrete_ot_oracle(np.zeros((9, 2)), np.zeros((9, 2)))
    with pytest.raises(ValueError):
        discrete_ot_oracle(np.zeros((3, 2)), np.zeros((4, 2)))


def test_radial_map_cost_close_to_enumeration(rng):
    g = RadialGrid.build(2, 1.0)
    rho0, rho1 = random_radial_pair(g, rng)
    T = radial_brenier(rho0, rho1)
    m = rho0.mass
    # six source points at mass quantiles of rho0, pushed radially through the map
    q = (np.arange(6) + 0.5) / 6
    radii = _inverse_cdf(rho0.profile, 2, 1.0, q * m)
    ang = rng.uniform(0, 2 * np.pi, size=6)
    x = np.stack([radii * np.cos(ang), radii * np.sin(ang)], axis=1)
    t = T(radii)
    y = x * (t / radii)[:, None]
    y = y[rng.permutation(6)]
    best = discrete_ot_oracle(x, y)
    pairing = [int(np.argmin(np.linalg.norm(y - x[i] * (t[i] / radii[i]), axis=1))) for i in range(6)]
    map_cost = 0.5 * np.mean(np.sum((x - y[pairing]) ** 2, axis=1))
    assert map_cost <= 1.05 * best.cost + 1e-15
