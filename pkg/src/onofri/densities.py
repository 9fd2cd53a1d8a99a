"""The reference densities mu_n and the closed-form identities around them.

    mu_n(y) = n / (omega_n (1 + |y|^m)^n),   m = n / (n - 1)

Radial derivatives used throughout (f = log mu_n, r = |y|)::

    f'(r)  = -n m r^(m-1) / (1 + r^m)
    f''(r) = -n m r^(m-2) ((m - 1) - r^m) / (1 + r^m)^2
    Delta_n f = r^(1-n) (r^(n-1) |f'|^(n-2) f')' = (n - 1) |f'|^(n-2) (f'' + f'/r)

Since (m - 1)(n - 1) = 1, r^(n-1) |f'|^(n-2) f' = -(nm)^(n-1) theta(r), whose
derivative gives Delta_n f = -(nm)^(n-1) omega_n mu_n.  The generic product-rule
form above is what ``identity_nlaplacian`` evaluates, so that constant is
checked rather than assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    DiskGrid,
    RadialGrid,
    integrate_radial,
    laplacian_disk,
    omega,
    radial_derivative,
)

__all__ = [
    "ModelDensity",
    "IdentityRow",
    "ResidualReport",
    "mu",
    "theta",
    "grad_log_mu",
    "identity_laplacian_2d",
    "identity_nlaplacian",
    "closed_form_suite",
    "rows_to_csv",
]


@dataclass(frozen=True)
class ModelDensity:
    """mu_n with its dimension-dependent constants."""

    n: int
    m: float = field(init=False)
    omega: float = field(init=False)
    alpha: float = field(init=False)
    beta: float = field(init=False)

    def __post_init__(self):
        n = self.n
        if not isinstance(n, (int, np.integer)) or n < 2:
            raise ValueError(f"dimension must be an integer >= 2, got {n!r}")
        m = n / (n - 1)
        w = omega(n)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "omega", w)
        object.__setattr__(self, "alpha", m * (n / w) ** (1.0 / n))
        object.__setattr__(self, "beta", m ** (n - 1) * n**n * w)
        # cross-checks through the optimal Young parameter
        eps = self.eps_max
        if not math.isclose(n * n * m * eps / self.beta, self.alpha, rel_tol=1e-12):
            raise ArithmeticError("alpha(n) inconsistent with eps_max")
        if not math.isclose(n * eps**m / (m * self.beta), 1.0, rel_tol=1e-12):
            raise ArithmeticError("beta(n) inconsistent with eps_max")

    @property
    def eps_max(self) -> float:
        """Closed-form optimal Young parameter for rho = mu_n (independent of R)."""
        n, m = self.n, self.m
        return (n ** (1.0 / m) * m * self.omega ** (1.0 / n)) ** (1.0 / (m - 1.0))

    def profile(self, r):
        r = np.asarray(r, dtype=float)
        return self.n / (self.omega * (1.0 + r**self.m) ** self.n)

    def log_profile(self, r):
        r = np.asarray(r, dtype=float)
        return math.log(self.n / self.omega) - self.n * np.log1p(r**self.m)

    def dlog(self, r):
        """f'(r) for f = log mu_n; the continuous limit 0 is used at r = 0."""
        r = np.asarray(r, dtype=float)
        n, m = self.n, self.m
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -n * m * r ** (m - 1.0) / (1.0 + r**m)
        return np.where(r > 0, out, 0.0)

    def d2log(self, r):
        r = np.asarray(r, dtype=float)
        n, m = self.n, self.m
        return -n * m * r ** (m - 2.0) * ((m - 1.0) - r**m) / (1.0 + r**m) ** 2

    def theta(self, R: float) -> float:
        return theta(R, self)

    def boundary_value(self, R: float) -> float:
        return float(self.profile(R))


def mu(x, d: ModelDensity):
    """mu_n at points ``x`` of shape (..., n)."""
    x = np.asarray(x, dtype=float)
    return d.profile(np.linalg.norm(x, axis=-1))


def theta(R: float, d: ModelDensity) -> float:
    """Mass of mu_n on B_R: R^n / (1 + R^m)^(n-1)."""
    if not R > 0:
        raise ValueError(f"radius must be positive, got {R}")
    n, m = d.n, d.m
    # written as a power of R^-m to stay finite for large R
    return float((1.0 + R ** (-m)) ** (-(n - 1)))


def grad_log_mu(x, d: ModelDensity):
    """Gradient of log mu_n at points ``x`` of shape (..., n); zero at the origin."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = d.dlog(r) * x / r
    return np.where(r > 0, g, 0.0)


@dataclass(frozen=True)
class ResidualReport:
    name: str
    n: int
    R: float
    resolution: int
    sup_residual: float
    method: str


def identity_laplacian_2d(grid: DiskGrid, analytic: bool = False, width: int = 7) -> ResidualReport:
    """sup over interior nodes of |Delta log mu_2 + 8 pi mu_2|."""
    d = ModelDensity(2)
    r = grid.radius
    target = -8.0 * np.pi * d.profile(r)
    if analytic:
        lap = d.d2log(r) + d.dlog(r) / r
    else:
        lap = laplacian_disk(d.log_profile(r), grid, width=width)
    res = np.abs(lap - target)[:-1]
    return ResidualReport("laplacian_log_mu2", 2, grid.R, grid.n_r, float(res.max()),
                          "analytic" if analytic else f"stencil{width}")


def identity_nlaplacian(d: ModelDensity, grid: RadialGrid, analytic: bool = True,
                        width: int = 7) -> ResidualReport:
    """sup over nodes of |Delta_n log mu_n + (nm)^(n-1) omega_n mu_n| (radial form)."""
    n, m = d.n, d.m
    r = grid.nodes
    fp = d.dlog(r)
    if analytic:
        lap = (n - 1) * np.abs(fp) ** (n - 2) * (d.d2log(r) + fp / r)
    else:
        re = grid.r_eval
        flux = re ** (n - 1) * np.abs(d.dlog(re)) ** (n - 2) * d.dlog(re)
        # flux ~ r^n near 0; dividing by r^(n-1) amplifies stencil error at the
        # origin, so the discrete residual is taken over r >= R/10 only
        lap = (radial_derivative(flux, grid, parity=(-1) ** n, width=width) / re ** (n - 1))[:-1]
    target = -((n * m) ** (n - 1)) * d.omega * d.profile(r)
    err = np.abs(lap - target)
    if not analytic:
        err = err[r >= 0.1 * grid.R]
    return ResidualReport("n_laplacian_log_mu", n, grid.R, grid.size, float(np.max(err)),
                          "analytic" if analytic else f"stencil{width}")


@dataclass(frozen=True)
class IdentityRow:
    identity_name: str
    n: int
    R: float
    lhs: float
    rhs: float

    @property
    def abs_error(self) -> float:
        return abs(self.lhs - self.rhs)

    def as_dict(self) -> dict:
        return {"identity_name": self.identity_name, "n": self.n, "R": self.R,
                "lhs": self.lhs, "rhs": self.rhs, "abs_error": self.abs_error}


CSV_COLUMNS = ("identity_name", "n", "R", "lhs", "rhs", "abs_error")


def rows_to_csv(rows) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        dct = row.as_dict()
        lines.append(",".join(repr(dct[c]) if isinstance(dct[c], float) else str(dct[c])
                              for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def closed_form_suite(R: float, d: ModelDensity, grid: RadialGrid | None = None) -> list[IdentityRow]:
    """Quadrature check of every closed form attached to mu_n on B_R."""
    if not R > 0:
        raise ValueError(f"radius must be positive, got {R}")
    n, m, w = d.n, d.m, d.omega
    grid = grid or RadialGrid.build(n, R)
    th = theta(R, d)
    mu_r = d.profile
    I = lambda f: integrate_radial(f, grid)  # noqa: E731

    mass = I(mu_r)
    moment = I(lambda r: r**m * mu_r(r))
    root = I(lambda r: mu_r(r) ** (1.0 / m))
    grad_n = I(lambda r: np.abs(d.dlog(r)) ** n)

    rows = [
        IdentityRow("theta_R", n, R, mass, th),
        IdentityRow("moment_relation", n, R, moment, (n / w) ** (1.0 / n) * root - th),
        IdentityRow("grad_log_mu_n_power", n, R, grad_n, n ** (n - 1) * m**n * w * moment),
    ]
    if n == 2:
        sqrt_pi_mu = I(lambda r: np.sqrt(np.pi * mu_r(r)))
        second = I(lambda r: r**2 * mu_r(r))
        rows += [
            IdentityRow("sqrt_mu2", 2, R, I(lambda r: np.sqrt(mu_r(r))),
                        math.sqrt(math.pi) * math.log1p(R * R)),
            IdentityRow("grad_log_mu2_sq", 2, R, I(lambda r: d.dlog(r) ** 2),
                        16.0 * sqrt_pi_mu - 16.0 * np.pi * th),
            IdentityRow("renormalizer_J_mu2", 2, R,
                        2.0 / math.sqrt(math.pi) * I(lambda r: np.sqrt(mu_r(r))) - second,
                        math.log1p(R * R) + R * R / (1.0 + R * R)),
            IdentityRow("boundary_split", 2, R, sqrt_pi_mu + np.pi * th,
                        2.0 * sqrt_pi_mu - np.pi * second),
        ]
    return rows
