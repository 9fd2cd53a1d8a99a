"""Duality gaps between I_R and the renormalised free energy, and the Young parameter.

For zero-trace u with int e^u d mu_n = theta_R and rho of mass theta_R on B_R

    I_R(u) >= J_R(rho) - J_R(mu_n),

with equality at (0, mu_n).  The second half of the module handles

    A_rho = n^2 m int rho^(1/m) - n^(1+1/m) m omega_n^(1/n) theta_R
    B_rho = (n/m) int |y|^m rho
    G_rho(eps) = eps A_rho - eps^m B_rho,

whose maximiser eps_max = (A_rho / (m B_rho))^(1/(m-1)) does not depend on R
when rho = mu_n.
"""

from __future__ import annotations

import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .densities import IdentityRow, ModelDensity, theta
from .functionals import (
    DegenerateError,
    DensityFunction,
    DomainError,
    GridFunction,
    RangeError,
    constraint_scale,
    free_energy_nd,
    onofri_energy_nd,
    random_density,
    random_field,
)
from .geometry import DiskGrid, RadialGrid, integrate_radial

__all__ = [
    "DualityReport",
    "EpsilonSweep",
    "duality_gap",
    "duality_suite",
    "epsilon_coefficients",
    "epsilon_objective",
    "epsilon_max",
    "epsilon_argmax",
    "epsilon_sweep",
    "basic_identity_suite",
    "reports_to_jsonl",
    "reports_to_csv",
]


@dataclass(frozen=True)
class DualityReport:
    n: int
    R: float
    I_value: float
    J_value: float
    J_mu: float
    gap: float
    exp_residual: float
    mass_residual: float
    seed: int | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def _grid_of(field_or_density):
    return field_or_density.grid


def duality_gap(u_raw: GridFunction, rho_raw: DensityFunction, R: float | None,
                d: ModelDensity, seed: int | None = None) -> DualityReport:
    """Project (u_raw, rho_raw) onto the constraints and evaluate both sides.

    u_raw is rescaled by :func:`constraint_scale` unless it is identically
    zero; rho_raw is rescaled to mass theta_R.
    """
    grid = _grid_of(u_raw)
    if rho_raw.grid is not grid and rho_raw.grid != grid:
        raise ValueError("u and rho must live on the same grid")
    Rg = grid.R
    if R is not None and not math.isclose(R, Rg, rel_tol=1e-12):
        raise ValueError(f"radius {R} does not match grid radius {Rg}")
    th = theta(Rg, d)
    u = u_raw if not np.any(u_raw.values) else constraint_scale(u_raw, Rg, d)
    rho = rho_raw.with_mass(th)
    mu = DensityFunction.model(d, grid)

    I_val = onofri_energy_nd(u, Rg, d)
    J_val = free_energy_nd(rho, Rg, d)
    J_mu = free_energy_nd(mu, Rg, d)
    exp_res = grid.integrate(np.exp(u.values) * mu.values) - th
    mass_res = rho.mass - th
    return DualityReport(d.n, Rg, float(I_val), float(J_val), float(J_mu),
                         float(I_val - (J_val - J_mu)), float(exp_res), float(mass_res), seed)


def _grid_for(n: int, R: float, resolution: int):
    if n == 2:
        return DiskGrid.build(R, resolution, resolution)
    return RadialGrid.build(n, R, resolution)


def duality_suite(n: int, R: float, trials: int, seed, resolution: int = 128,
                  include_extremal: bool = False) -> list[DualityReport]:
    """Gaps for ``trials`` random pairs; trial i uses its own spawned seed.

    n = 2 draws general planar fields, n >= 3 radial ones.  Draws whose raw
    field cannot be projected onto the exponential constraint are redrawn
    from the same trial stream.
    """
    d = ModelDensity(n)
    grid = _grid_for(n, R, resolution)
    reports = []
    if include_extremal:
        reports.append(duality_gap(GridFunction.zeros(grid), DensityFunction.model(d, grid), R, d))
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(trials)):
        rng = np.random.default_rng(child)
        for _ in range(100):
            try:
                rep = duality_gap(random_field(grid, rng), random_density(grid, rng), R, d, seed=i)
                break
            except (DegenerateError, RangeError):
                continue
        else:
            raise DegenerateError(f"trial {i}: no admissible field after 100 draws")
        reports.append(rep)
    return reports


def reports_to_jsonl(reports) -> str:
    return "".join(json.dumps(r.as_dict()) + "\n" for r in reports)


def reports_to_csv(reports) -> str:
    rows = [r.as_dict() for r in reports]
    if not rows:
        return ""
    keys = list(rows[0])
    buf = io.StringIO()
    buf.write(",".join(keys) + "\n")
    for row in rows:
        buf.write(",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k]) for k in keys) + "\n")
    return buf.getvalue()


def epsilon_coefficients(rho: DensityFunction, R: float | None, d: ModelDensity) -> tuple[float, float]:
    """(A_rho, B_rho) for a density of mass theta_R."""
    grid = rho.grid
    Rg = grid.R
    if R is not None and not math.isclose(R, Rg, rel_tol=1e-12):
        raise ValueError(f"radius {R} does not match grid radius {Rg}")
    n, m = d.n, d.m
    r = grid.radius if isinstance(grid, DiskGrid) else grid.r_eval
    root = grid.integrate(rho.values ** (1.0 / m))
    A = n * n * m * root - n ** (1.0 + 1.0 / m) * m * d.omega ** (1.0 / n) * theta(Rg, d)
    B = (n / m) * grid.integrate(r**m * rho.values)
    return float(A), float(B)


def epsilon_objective(rho: DensityFunction, eps: float, R: float | None, d: ModelDensity) -> float:
    """G_rho(eps) = eps A_rho - eps^m B_rho."""
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    A, B = epsilon_coefficients(rho, R, d)
    return eps * A - eps**d.m * B


def _closed_form(A: float, B: float, m: float) -> float:
    if B <= 0.0:
        raise DegenerateError("B_rho vanishes; the density sits at the origin")
    if A <= 0.0:
        warnings.warn(f"A_rho = {A:.3e} <= 0: G has no positive interior maximum", RuntimeWarning,
                      stacklevel=3)
        return math.nan
    return (A / (m * B)) ** (1.0 / (m - 1.0))


def epsilon_max(rho: DensityFunction, R: float | None, d: ModelDensity) -> float:
    """Closed-form maximiser of G_rho; NaN (with a warning) when A_rho <= 0."""
    A, B = epsilon_coefficients(rho, R, d)
    return _closed_form(A, B, d.m)


def epsilon_argmax(A: float, B: float, m: float, upper: float | None = None,
                   n_grid: int = 1000) -> float:
    """Numerical maximiser of eps A - eps^m B: grid bracket, then bounded Brent."""
    if A <= 0.0:
        return math.nan
    upper = upper or 4.0 * (A / B) ** (1.0 / (m - 1.0))
    eps = np.linspace(upper / n_grid, upper, n_grid)
    g = eps * A - eps**m * B
    k = int(np.argmax(g))
    lo, hi = eps[max(k - 1, 0)] * (0.5 if k == 0 else 1.0), eps[min(k + 1, n_grid - 1)]
    scale = abs(g[k]) or 1.0
    res = minimize_scalar(lambda e: -(e * A - e**m * B) / scale, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12 * hi})
    return float(res.x)


@dataclass(frozen=True)
class EpsilonSweep:
    label: str
    A: float
    B: float
    eps: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    eps_max: float
    eps_argmax: float

    def as_dict(self) -> dict:
        return {"label": self.label, "A": self.A, "B": self.B, "eps_max": self.eps_max,
                "eps_argmax": self.eps_argmax}

    def to_csv(self) -> str:
        return "eps,G\n" + "".join(f"{e!r},{g!r}\n" for e, g in zip(self.eps, self.G))


def epsilon_sweep(rho: DensityFunction, R: float | None, d: ModelDensity, label: str = "rho",
                  eps_upper: float | None = None, n_samples: int = 1000) -> EpsilonSweep:
    """Sample G_rho on (0, eps_upper] and locate its maximiser both ways."""
    A, B = epsilon_coefficients(rho, R, d)
    e_max = _closed_form(A, B, d.m)
    if eps_upper is None:
        eps_upper = 3.0 * e_max if math.isfinite(e_max) else 10.0
    eps = np.linspace(eps_upper / n_samples, eps_upper, n_samples)
    G = eps * A - eps**d.m * B
    return EpsilonSweep(label, A, B, eps, G, e_max, epsilon_argmax(A, B, d.m, eps_upper, n_samples))


def basic_identity_suite(d: ModelDensity, R: float, grid: RadialGrid | None = None) -> list[IdentityRow]:
    """Three constant identities through eps_max(mu_n) and two integral ones."""
    if not R > 0:
        raise ValueError(f"radius must be positive, got {R}")
    n, m, w = d.n, d.m, d.omega
    grid = grid or RadialGrid.build(n, R)
    e = d.eps_max
    mu_r = d.profile
    moment = integrate_radial(lambda r: r**m * mu_r(r), grid)
    root = integrate_radial(lambda r: mu_r(r) ** (1.0 / m), grid)
    grad_n = integrate_radial(lambda r: np.abs(d.dlog(r)) ** n, grid)
    return [
        IdentityRow("eps_alpha", n, R, n * n * m * e / d.beta, d.alpha),
        IdentityRow("eps_beta", n, R, n * e**m / (m * d.beta), 1.0),
        IdentityRow("eps_product", n, R, n ** (1.0 + 1.0 / m) * m * w ** (1.0 / n) * e, m**n * n**n * w),
        IdentityRow("grad_log_mu_moment", n, R, grad_n, n ** (n - 1) * m**n * w * moment),
        IdentityRow("theta_split", n, R, theta(R, d), (n / w) ** (1.0 / n) * root - moment),
    ]
