import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from onofri.densities import ModelDensity, theta
from onofri.duality import (
    duality_gap,
    duality_suite,
    epsilon_argmax,
    epsilon_coefficients,
    epsilon_max,
    epsilon_objective,
    epsilon_sweep,
    basic_identity_suite,
    reports_to_csv,
    reports_to_jsonl,
)
from onofri.functionals import (
    DegenerateError,
    DensityFunction,
    DomainError,
    GridFunction,
)
from onofri.geometry import DiskGrid, RadialGrid

FOUR_SQRT_PI = 4.0 * math.sqrt(math.pi)


def _model(n, R, k=128):
    d = ModelDensity(n)
    g = DiskGrid.build(R, k, k) if n == 2 else RadialGrid.build(n, R, k)
    return d, g, DensityFunction.model(d, g)


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("R", [1.0, 2.0, 5.0])
def test_gap_vanishes_at_extremal_pair(n, R):
    d, g, mu = _model(n, R)
    rep = duality_gap(GridFunction.zeros(g), mu, R, d)
    assert abs(rep.gap) < 1e-8
    assert rep.I_value == 0.0
    assert abs(rep.exp_residual) < 1e-12 and abs(rep.mass_residual) < 1e-12


@pytest.mark.parametrize("n", [2, 3])
def test_random_gaps_nonnegative_with_residuals(n):
    reps = duality_suite(n, 2.0, trials=10, seed=11, resolution=96)
    assert len(reps) == 10
    for rep in reps:
        assert rep.gap >= -1e-8
        assert abs(rep.exp_residual) < 1e-10
        assert abs(rep.mass_residual) < 1e-10


def test_suite_is_deterministic_and_seeded():
    a = duality_suite(3, 1.0, trials=4, seed=[5, 1], include_extremal=True)
    b = duality_suite(3, 1.0, trials=4, seed=[5, 1], include_extremal=True)
    assert a == b
    assert a[0].seed is None and [r.seed for r in a[1:]] == [0, 1, 2, 3]
    c = duality_suite(3, 1.0, trials=4, seed=[5, 2])
    assert c != a[1:]


def test_mismatched_grids_rejected():
    d, g, mu = _model(2, 1.0, 64)
    other = DiskGrid.build(2.0, 64, 64)
    with pytest.raises(ValueError):
        duality_gap(GridFunction.zeros(other), mu, None, d)
    with pytest.raises(ValueError):
        duality_gap(GridFunction.zeros(g), mu, 3.0, d)


def test_report_serialisation():
    reps = duality_suite(2, 1.0, trials=3, seed=0, resolution=64)
    lines = reports_to_jsonl(reps).splitlines()
    assert len(lines) == 3
    rows = [json.loads(s) for s in lines]
    assert set(rows[0]) == {"n", "R", "I_value", "J_value", "J_mu", "gap",
                            "exp_residual", "mass_residual", "seed"}
    assert rows[2]["gap"] == reps[2].gap
    csv = reports_to_csv(reps).splitlines()
    assert csv[0].startswith("n,R,I_value") and len(csv) == 4
    assert reports_to_csv([]) == ""


# ---------------------------------------------------------------- epsilon


@pytest.mark.parametrize("R", [1.0, 2.0, 5.0])
def test_epsilon_max_mu2(R):
    d, g, mu = _model(2, R, 256)
    assert_allclose(d.eps_max, FOUR_SQRT_PI, rtol=1e-14)
    assert_allclose(epsilon_max(mu, R, d), FOUR_SQRT_PI, rtol=1e-7)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_closed_form_matches_argmax(n):
    d = ModelDensity(n)
    g = RadialGrid.build(n, 1.0)
    mu = DensityFunction.model(d, g)
    A, B = epsilon_coefficients(mu, 1.0, d)
    e = epsilon_max(mu, 1.0, d)
    assert_allclose(e, d.eps_max, rtol=1e-9)
    assert_allclose(epsilon_argmax(A, B, d.m), e, rtol=1e-6)


def test_coefficients_for_mu_satisfy_closed_ratio():
    for n in (2, 3, 4):
        d = ModelDensity(n)
        for R in (0.5, 3.0):
            g = RadialGrid.build(n, R)
            A, B = epsilon_coefficients(DensityFunction.model(d, g), R, d)
            assert_allclose(A / (d.m * B), n ** (1 / d.m) * d.m * d.omega ** (1 / n), rtol=1e-9)


def test_objective_shape():
    d, g, mu = _model(2, 1.0, 64)
    small = [epsilon_objective(mu, e, 1.0, d) for e in (1e-4, 1e-6, 1e-8)]
    assert abs(small[-1]) < abs(small[0]) and abs(small[-1]) < 1e-6
    assert epsilon_objective(mu, 1e4, 1.0, d) < 0
    sweep = epsilon_sweep(mu, 1.0, d, n_samples=1000)
    k = int(np.argmax(sweep.G))
    assert abs(sweep.eps[k] - sweep.eps_max) <= sweep.eps[1] - sweep.eps[0]
    for e in (0.0, -1.0):
        with pytest.raises(DomainError):
            epsilon_objective(mu, e, 1.0, d)


def test_stationarity_of_closed_form():
    d, g, mu = _model(3, 1.0)
    A, B = epsilon_coefficients(mu, 1.0, d)
    e = epsilon_max(mu, 1.0, d)
    h = 1e-5 * e
    G = lambda x: x * A - x**d.m * B  # noqa: E731
    assert abs((G(e + h) - G(e - h)) / (2 * h)) < 1e-6


def test_nonpositive_A_reports_nan():
    d = ModelDensity(2)
    g = DiskGrid.build(1.0, 128, 64)
    # a narrow Gaussian of mass theta_1 is concentrated enough that A < 0
    sigma = 0.05
    bump = np.exp(-g.radius**2 / sigma**2)
    rho = DensityFunction(bump, g).with_mass(theta(1.0, d))
    A, B = epsilon_coefficients(rho, 1.0, d)
    assert A < 0 < B
    with pytest.warns(RuntimeWarning, match="no positive interior maximum"):
        assert math.isnan(epsilon_max(rho, 1.0, d))
    assert math.isnan(epsilon_argmax(A, B, d.m))


def test_zero_moment_is_degenerate():
    d = ModelDensity(3)
    g = RadialGrid.build(3, 1.0)
    with pytest.raises(DegenerateError):
        epsilon_max(DensityFunction(np.zeros_like(g.r_eval), g), 1.0, d)


# ---------------------------------------------------------------- identities


@pytest.mark.parametrize("n", [2, 3, 4, 5])
@pytest.mark.parametrize("R", [0.5, 1.0, 2.0, 5.0])
def test_basic_identities(n, R):
    rows = basic_identity_suite(ModelDensity(n), R)
    assert [r.identity_name for r in rows] == ["eps_alpha", "eps_beta", "eps_product",
                                     "grad_log_mu_moment", "theta_split"]
    for row in rows[:3]:
        assert abs(row.lhs - row.rhs) <= 1e-12 * max(1.0, abs(row.rhs))
    for row in rows[3:]:
        assert abs(row.lhs - row.rhs) < 1e-8 * max(1.0, abs(row.rhs))


def test_identity_anchors_n2():
    rows = basic_identity_suite(ModelDensity(2), 1.0)
    # 2 (4 sqrt(pi))^2 / (2 * 16 pi) = 1
    assert_allclose(2 * FOUR_SQRT_PI**2 / (2 * 16 * math.pi), 1.0, rtol=1e-15)
    assert_allclose(rows[1].lhs, 1.0, rtol=1e-14)
    assert_allclose(rows[0].rhs, 2 / math.sqrt(math.pi), rtol=1e-15)
    assert_allclose(ModelDensity(2).beta, 16 * math.pi, rtol=1e-15)


def test_identity_theta_row_n3():
    row = basic_identity_suite(ModelDensity(3), 1.0)[4]
    assert row.lhs == pytest.approx(0.25, abs=1e-15)
    assert abs(row.rhs - 0.25) < 1e-8


def test_identity_rejects_bad_radius():
    with pytest.raises(ValueError):
        basic_identity_suite(ModelDensity(2), 0.0)
