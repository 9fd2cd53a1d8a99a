"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every criterion is evaluated at its stated tolerance and runtime budget.
"""

import math
import time

import numpy as np
import pytest

from onofri.densities import ModelDensity, identity_laplacian_2d, identity_nlaplacian, theta
from onofri.duality import basic_identity_suite, duality_suite, epsilon_argmax, epsilon_coefficients
from onofri.functionals import (
    DensityFunction,
    GridFunction,
    corollary_check,
    corollary_field,
    free_energy_2d,
    onofri_deficit_2d,
    onofri_deficit_nd,
    random_field,
    random_sphere_field,
    sphere_onofri,
)
from onofri.geometry import DiskGrid, RadialGrid, SphereGrid
from onofri.pde import EvolutionState, fd_evolve, minimize_onofri
from onofri.transport import lemma1_check, monge_ampere_residual, radial_brenier, random_radial_pair

SEED = 20240611


@pytest.fixture
def verdict(capsys):
    """Collect named checks, print one PASS/FAIL line, then assert."""

    def finish(number, checks, elapsed, budget):
        checks = list(checks) + [(f"runtime {elapsed:.2f}s < {budget:g}s", elapsed < budget)]
        failed = [name for name, ok in checks if not ok]
        with capsys.disabled():
            status = "PASS" if not failed else "FAIL"
            print(f"\n{status} criterion {number}" + (f": {'; '.join(failed)}" if failed else ""))
        assert not failed, f"criterion {number}: " + "; ".join(failed)

    return finish


def test_criterion_01_theta_closed_form(verdict):
    t0 = time.perf_counter()
    checks = []
    d2 = ModelDensity(2)
    for R in (0.5, 1.0, 2.0, 5.0):
        g = DiskGrid.build(R, 128, 16)
        mass = DensityFunction.model(d2, g).mass
        checks.append((f"n=2 R={R}", abs(mass - R * R / (1 + R * R)) < 1e-8))
    for n in (3, 4):
        d = ModelDensity(n)
        for R in (0.5, 1.0, 2.0, 5.0):
            mass = DensityFunction.model(d, RadialGrid.build(n, R)).mass
            closed = R**n / (1 + R**d.m) ** (n - 1)
            checks.append((f"n={n} R={R}", abs(mass - closed) < 1e-8 and abs(theta(R, d) - closed) < 1e-12))
    verdict(1, checks, time.perf_counter() - t0, 1.0)


def test_criterion_02_free_energy_of_model(verdict):
    t0 = time.perf_counter()
    d = ModelDensity(2)
    checks = []
    for R in (1.0, 2.0, 5.0):
        J = free_energy_2d(DensityFunction.model(d, DiskGrid.build(R, 128, 16)), R)
        closed = math.log1p(R * R) + R * R / (1 + R * R)
        checks.append((f"R={R}", abs(J - closed) < 1e-8))
    J100 = free_energy_2d(DensityFunction.model(d, DiskGrid.build(100.0, 256, 16)), 100.0)
    checks.append((f"J_100 = {J100:.4f} > 9", J100 > 9))
    verdict(2, checks, time.perf_counter() - t0, 1.0)


def test_criterion_03_identity_audit(verdict):
    t0 = time.perf_counter()
    checks = [("laplacian log mu_2",
               identity_laplacian_2d(DiskGrid.build(1.0, 128, 16), analytic=True).sup_residual < 1e-8)]
    for n in (2, 3, 4):
        res = identity_nlaplacian(ModelDensity(n), RadialGrid.build(n, 2.0), analytic=True)
        checks.append((f"n-Laplacian n={n}", res.sup_residual < 1e-8))
    for n in (2, 3, 4, 5):
        for R in (0.5, 1.0, 2.0, 5.0):
            for row in basic_identity_suite(ModelDensity(n), R):
                checks.append((f"{row.identity_name} n={n} R={R}",
                               row.abs_error < 1e-8 * max(1.0, abs(row.rhs))))
    verdict(3, checks, time.perf_counter() - t0, 5.0)


def test_criterion_04_epsilon_max(verdict):
    t0 = time.perf_counter()
    checks = [("4 sqrt(pi)", abs(ModelDensity(2).eps_max - 4 * math.sqrt(math.pi)) < 1e-10)]
    for n in (2, 3, 4, 5):
        d = ModelDensity(n)
        A, B = epsilon_coefficients(DensityFunction.model(d, RadialGrid.build(n, 1.0)), 1.0, d)
        num = epsilon_argmax(A, B, d.m)
        checks.append((f"argmax n={n}", abs(num / d.eps_max - 1) < 1e-6))
    verdict(4, checks, time.perf_counter() - t0, 2.0)


def test_criterion_05_duality_gap(verdict):
    t0 = time.perf_counter()
    checks = []
    for n in (2, 3):
        for R in (1.0, 2.0, 5.0):
            reps = duality_suite(n, R, 50, [SEED, n, int(R)], include_extremal=True)
            checks.append((f"extremal n={n} R={R}", abs(reps[0].gap) < 1e-6))
            checks.append((f"min gap n={n} R={R}", min(r.gap for r in reps[1:]) >= -1e-8))
    verdict(5, checks, time.perf_counter() - t0, 60.0)


def test_criterion_06_onofri_deficit(verdict):
    t0 = time.perf_counter()
    checks = []
    d2, d3 = ModelDensity(2), ModelDensity(3)
    disk = DiskGrid.build(50.0, 256, 128)
    ball = RadialGrid.build(3, 50.0, 256)
    for name, grid, deficit in (("n=2", disk, onofri_deficit_2d),
                                ("n=3", ball, lambda u: onofri_deficit_nd(u, d3))):
        checks.append((f"deficit(0) {name}", abs(deficit(GridFunction.zeros(grid)).total) < 1e-12))
        rng = np.random.default_rng([SEED, 6, grid.n if hasattr(grid, "n") else 2])
        vals = [deficit(random_field(grid, rng, support=10.0)).total for _ in range(100)]
        checks.append((f"min deficit {name} = {min(vals):.3e}", min(vals) >= -1e-8))
    rng = np.random.default_rng([SEED, 6, 0])
    agree = max(abs(onofri_deficit_2d(u).total - onofri_deficit_nd(u, d2).total)
                for u in (random_field(disk, rng, support=10.0) for _ in range(10)))
    checks.append((f"2d vs nd {agree:.1e}", agree < 1e-10))
    verdict(6, checks, time.perf_counter() - t0, 60.0)


def test_criterion_07_displacement_inequality(verdict):
    t0 = time.perf_counter()
    checks = []
    for n in (2, 3):
        grid = RadialGrid.build(n, 1.0)
        mu = DensityFunction.model(ModelDensity(n), grid)
        checks.append((f"equality n={n}", abs(lemma1_check(mu, mu).slack) < 1e-8))
        rng = np.random.default_rng([SEED, 7, n])
        slack = min(lemma1_check(*random_radial_pair(grid, rng)).slack for _ in range(20))
        checks.append((f"min slack n={n} = {slack:.3e}", slack >= -1e-6))
    d = ModelDensity(2)
    res = []
    for k in (64, 128, 256):
        g = RadialGrid.build(2, 1.0, k)
        uni = DensityFunction.from_profile(lambda r: np.full_like(np.asarray(r, float), theta(1.0, d) / math.pi), g)
        mu = DensityFunction.model(d, g)
        res.append(monge_ampere_residual(radial_brenier(uni, mu), uni, mu))
    checks.append((f"Monge-Ampere residual halves {res}", res[0] / res[1] >= 2 and res[1] / res[2] >= 2))
    verdict(7, checks, time.perf_counter() - t0, 30.0)


def test_criterion_08_fast_diffusion(verdict):
    t0 = time.perf_counter()
    th = theta(1.0, ModelDensity(2))
    tr = fd_evolve(lambda r: np.full_like(np.asarray(r, float), th / math.pi), 1.0, 20.0, dt=0.01)
    drift = float(np.max(np.abs(tr.mass - tr.mass[0])))
    stay = fd_evolve(EvolutionState.model(1.0), 1.0, 20.0, dt=0.01)
    checks = [(f"L1 at t=20 = {tr.l1_distance[-1]:.2e}", tr.l1_distance[-1] < 1e-3),
              (f"mass drift {drift:.1e}", drift < 1e-10),
              (f"mu_2 start max L1 {np.max(stay.l1_distance):.1e}", np.max(stay.l1_distance) < 1e-6)]
    verdict(8, checks, time.perf_counter() - t0, 120.0)


def test_criterion_09_minimization(verdict):
    t0 = time.perf_counter()
    grid = DiskGrid.build(1.0, 128, 128)
    rng = np.random.default_rng([SEED, 9])
    checks = []
    for i in range(5):
        st = minimize_onofri(1.0, ModelDensity(2), random_field(grid, rng))
        checks += [(f"init {i} norm {st.final_norm:.1e}", st.final_norm < 1e-3),
                   (f"init {i} I {st.objective:.1e}", -1e-8 <= st.objective <= 1e-6),
                   (f"init {i} lambda {st.lam:.6f}", abs(st.lam - 1) < 1e-2),
                   (f"init {i} residual {st.residual:.1e}", st.residual < 1e-3)]
    verdict(9, checks, time.perf_counter() - t0, 120.0)


def test_criterion_10_corollary(verdict):
    # the inequality exactly as published: gradient coefficient (n-1)/n^2
    t0 = time.perf_counter()
    checks = []
    for n in (2, 3):
        d = ModelDensity(n)
        grid = DiskGrid.build(1.0, 128, 64) if n == 2 else RadialGrid.build(n, 1.0)
        rng = np.random.default_rng([SEED, 10, n])
        slack = min(corollary_check(random_field(grid, rng), 1.0, d).slack for _ in range(50))
        checks.append((f"n={n} min slack {slack:.3e} >= -1e-8", slack >= -1e-8))
        star = corollary_check(corollary_field(GridFunction.zeros(grid), d), 1.0, d).slack
        checks.append((f"n={n} slack at v* {star:.3e} < 1e-6", abs(star) < 1e-6))
    verdict(10, checks, time.perf_counter() - t0, 30.0)


def test_criterion_11_sphere_functional(verdict):
    t0 = time.perf_counter()
    grid = SphereGrid.build(48)
    rng = np.random.default_rng([SEED, 11])
    vals, shifts = [], []
    for _ in range(50):
        u = random_sphere_field(grid, rng)
        J = sphere_onofri(u, grid)
        vals.append(J)
        shifts.append(abs(sphere_onofri(u + rng.uniform(-5, 5), grid) - J))
    checks = [(f"min J {min(vals):.3e}", min(vals) >= -1e-6),
              (f"shift invariance {max(shifts):.1e}", max(shifts) < 1e-10),
              ("J(0) = 0", sphere_onofri(np.zeros(grid.shape), grid) == 0.0)]
    verdict(11, checks, time.perf_counter() - t0, 10.0)
