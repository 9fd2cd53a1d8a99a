"""Onofri energies, free energies, deficits and the constraint projection.

Fields live either on a :class:`DiskGrid` (general planar fields, n = 2) or on
a :class:`RadialGrid` (radial fields in any dimension).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Union

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .densities import ModelDensity, theta
from .geometry import DiskGrid, RadialGrid, SphereGrid, gradient_disk, radial_derivative

__all__ = [
    "ConstraintError",
    "DomainError",
    "DegenerateError",
    "RangeError",
    "GridFunction",
    "DensityFunction",
    "DeficitReport",
    "CorollaryReport",
    "onofri_energy_2d",
    "free_energy_2d",
    "h_n_pointwise",
    "onofri_energy_nd",
    "free_energy_nd",
    "onofri_deficit_2d",
    "onofri_deficit_nd",
    "corollary_check",
    "corollary_field",
    "sphere_onofri",
    "constraint_scale",
    "random_field",
    "random_admissible",
    "random_density",
    "random_sphere_field",
]

Grid = Union[DiskGrid, RadialGrid]
TRACE_TOL = 1e-12
EXP_LIMIT = 700.0


class ConstraintError(ValueError):
    pass


class DomainError(ValueError):
    pass


class DegenerateError(ValueError):
    pass


class RangeError(OverflowError):
    pass


@dataclass(frozen=True)
class GridFunction:
    """Scalar field sampled on the evaluation nodes of a grid."""

    values: np.ndarray = field(repr=False)
    grid: Grid

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        expected = self.grid.shape if isinstance(self.grid, DiskGrid) else (self.grid.size + 1,)
        if v.shape != expected:
            raise ValueError(f"values of shape {v.shape} do not fit grid shape {expected}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: Grid) -> "GridFunction":
        shape = grid.shape if isinstance(grid, DiskGrid) else (grid.size + 1,)
        return cls(np.zeros(shape), grid)

    @classmethod
    def from_callable(cls, f: Callable, grid: Grid) -> "GridFunction":
        """``f(x, y)`` on a disk grid, ``f(r)`` on a radial grid."""
        if isinstance(grid, DiskGrid):
            return cls(grid.sample(f), grid)
        return cls(np.asarray(f(grid.r_eval), dtype=float), grid)

    @property
    def boundary(self) -> np.ndarray:
        return self.values[-1]

    @property
    def zero_trace(self) -> bool:
        return bool(np.max(np.abs(self.boundary)) < TRACE_TOL)

    @property
    def interior(self) -> np.ndarray:
        return self.values[:-1]

    def integrate(self, weight=None) -> float:
        v = self.values if weight is None else self.values * weight
        return self.grid.integrate(v)

    def gradient(self) -> np.ndarray:
        """Gradient components per node in the local (r, theta) or (r,) frame."""
        if isinstance(self.grid, DiskGrid):
            return gradient_disk(self.values, self.grid)
        return radial_derivative(self.values, self.grid)[:, None]

    def __mul__(self, s: float) -> "GridFunction":
        return GridFunction(self.values * s, self.grid)

    __rmul__ = __mul__

    def __add__(self, other: "GridFunction") -> "GridFunction":
        return GridFunction(self.values + other.values, self.grid)


@dataclass(frozen=True)
class DensityFunction:
    """Nonnegative field on a grid with its quadrature mass cached.

    ``profile`` optionally keeps the radial function r -> rho(r) that produced
    the samples; transport needs it to invert cumulative masses accurately.
    """

    values: np.ndarray = field(repr=False)
    grid: Grid
    profile: Callable | None = field(default=None, repr=False, compare=False)
    mass: float = field(init=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            i = tuple(int(k) for k in np.unravel_index(int(np.argmax((v < 0) | ~np.isfinite(v))), v.shape))
            raise DomainError(f"density negative or not finite at node {i}: {float(v[i])!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mass", self.grid.integrate(v))

    @classmethod
    def from_profile(cls, profile: Callable, grid: Grid) -> "DensityFunction":
        if isinstance(grid, DiskGrid):
            return cls(profile(grid.radius), grid, profile)
        return cls(np.asarray(profile(grid.r_eval), dtype=float), grid, profile)

    @classmethod
    def model(cls, d: ModelDensity, grid: Grid) -> "DensityFunction":
        return cls.from_profile(d.profile, grid)

    def with_mass(self, target: float) -> "DensityFunction":
        if self.mass <= 0:
            raise DegenerateError("cannot rescale a density with zero mass")
        s = target / self.mass
        prof = None if self.profile is None else (lambda r, p=self.profile, s=s: s * p(r))
        return DensityFunction(self.values * s, self.grid, prof)


def _dim(grid: Grid, d: ModelDensity | None = None) -> int:
    n = 2 if isinstance(grid, DiskGrid) else grid.n
    if d is not None and d.n != n:
        raise ValueError(f"density dimension {d.n} does not match grid dimension {n}")
    return n


def _check_radius(grid: Grid, R: float | None):
    if R is not None and not math.isclose(R, grid.R, rel_tol=1e-12):
        raise ValueError(f"radius {R} does not match grid radius {grid.R}")


def _require_zero_trace(u: GridFunction):
    if not u.zero_trace:
        raise ConstraintError(
            f"field must vanish on the boundary ring (max |u| there = {np.max(np.abs(u.boundary)):.3e})")


def _radius(grid: Grid) -> np.ndarray:
    return grid.radius if isinstance(grid, DiskGrid) else grid.r_eval


def _log_mu_gradient(grid: Grid, d: ModelDensity) -> np.ndarray:
    fp = d.dlog(_radius(grid))
    if isinstance(grid, DiskGrid):
        return np.stack([fp, np.zeros_like(fp)], axis=-1)
    return fp[:, None]


def _quotient_poly(n: int) -> np.ndarray:
    # psi(x) = x^n - (n/2) x^2 + (n/2 - 1) has a double root at x = 1
    psi = np.zeros(n + 1)
    psi[0] = 1.0
    psi[n - 2] -= n / 2.0
    psi[n] += n / 2.0 - 1.0
    q, rem = np.polydiv(psi, np.array([1.0, -2.0, 1.0]))
    assert np.allclose(rem, 0.0)
    return q


def h_n_pointwise(g_u, g_m, n: int):
    """Bregman gap of z -> |z|^n between g_m and g_m + g_u (last axis = vector).

    Evaluated as  t^n (x - 1)^2 q(x) + (n/2) t^(n-2) |g_u|^2  with t = |g_m|,
    x = |g_m + g_u| / t and q = psi / (x - 1)^2, which is a sum of nonnegative
    terms and avoids the cancellation in the defining three-term expression.
    For n = 2 it reduces to |g_u|^2 exactly.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    a = np.asarray(g_u, dtype=float)
    b = np.asarray(g_m, dtype=float)
    a2 = np.sum(a * a, axis=-1)
    if n == 2:
        return a2
    t = np.sqrt(np.sum(b * b, axis=-1))
    s = np.sqrt(np.sum((a + b) ** 2, axis=-1))
    ab = np.sum(a * b, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        xm1 = (a2 + 2.0 * ab) / ((s + t) * t)
        x = s / t
        bracket = t**n * xm1**2 * np.polyval(_quotient_poly(n), x)
        out = bracket + 0.5 * n * t ** (n - 2) * a2
    return np.where(t > 0, out, a2 ** (n / 2.0))


def _dirichlet_like(u: GridFunction, d: ModelDensity) -> float:
    """int H_n(u, mu_n) dx over the grid."""
    n = _dim(u.grid, d)
    h = h_n_pointwise(u.gradient(), _log_mu_gradient(u.grid, d), n)
    return u.grid.integrate(h)


def _mu_weight(grid: Grid, d: ModelDensity) -> np.ndarray:
    return d.profile(_radius(grid))


def onofri_energy_2d(u: GridFunction, R: float | None = None) -> float:
    """I_R(u) = (1/16 pi) int |grad u|^2 + int u d mu_2 for zero-trace u."""
    _require_zero_trace(u)
    _check_radius(u.grid, R)
    d = ModelDensity(2)
    g = u.gradient()
    dirichlet = u.grid.integrate(np.sum(g * g, axis=-1))
    return dirichlet / (16.0 * np.pi) + u.integrate(_mu_weight(u.grid, d))


def onofri_energy_nd(u: GridFunction, R: float | None, d: ModelDensity) -> float:
    """I_R(u) = (1/beta) int H_n(u, mu_n) + int u d mu_n for zero-trace u."""
    _require_zero_trace(u)
    _check_radius(u.grid, R)
    return _dirichlet_like(u, d) / d.beta + u.integrate(_mu_weight(u.grid, d))


def free_energy_2d(rho: DensityFunction, R: float | None = None) -> float:
    """J_R(rho) = (2/sqrt(pi)) int sqrt(rho) - int |y|^2 rho."""
    _check_radius(rho.grid, R)
    r = _radius(rho.grid)
    return (2.0 / math.sqrt(math.pi) * rho.grid.integrate(np.sqrt(rho.values))
            - rho.grid.integrate(r**2 * rho.values))


def free_energy_nd(rho: DensityFunction, R: float | None, d: ModelDensity) -> float:
    """J_R(rho) = alpha(n) int rho^(1/m) - int |y|^m rho."""
    _check_radius(rho.grid, R)
    _dim(rho.grid, d)
    r = _radius(rho.grid)
    return (d.alpha * rho.grid.integrate(rho.values ** (1.0 / d.m))
            - rho.grid.integrate(r**d.m * rho.values))


@dataclass(frozen=True)
class DeficitReport:
    dirichlet: float
    linear: float
    log: float
    total: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _exp_guard(u: GridFunction):
    top = float(np.max(u.values))
    if top > EXP_LIMIT:
        raise RangeError(f"max u = {top:.3g} overflows exp(u); rescale the field amplitude")


def _deficit(u: GridFunction, d: ModelDensity, energy: float) -> DeficitReport:
    _require_zero_trace(u)
    _exp_guard(u)
    w = _mu_weight(u.grid, d)
    linear = u.integrate(w)
    # u = 0 outside the grid, so int_{R^n} e^u d mu = 1 + int_B (e^u - 1) d mu exactly
    log_term = math.log1p(u.grid.integrate(np.expm1(u.values) * w))
    return DeficitReport(energy, linear, log_term, energy + linear - log_term)


def onofri_deficit_2d(u: GridFunction) -> DeficitReport:
    """Whole-plane Onofri deficit of a field supported inside the grid disk."""
    d = ModelDensity(2)
    if _dim(u.grid) != 2:
        raise ValueError("onofri_deficit_2d needs a planar field")
    g = u.gradient()
    dirichlet = u.grid.integrate(np.sum(g * g, axis=-1)) / (16.0 * np.pi)
    return _deficit(u, d, dirichlet)


def onofri_deficit_nd(u: GridFunction, d: ModelDensity) -> DeficitReport:
    """Whole-space n-dimensional deficit with (1/beta) int H_n as energy term."""
    _require_zero_trace(u)
    return _deficit(u, d, _dirichlet_like(u, d) / d.beta)


@dataclass(frozen=True)
class CorollaryReport:
    lhs: float
    rhs: float
    slack: float
    exp_integral: float
    gradient_integral: float
    constraint_residual: float
    sharp: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def corollary_check(v: GridFunction, R: float | None, d: ModelDensity,
                    sharp: bool = False) -> CorollaryReport:
    """Both sides of the exponential/gradient inequality for zero-trace v.

        (n/omega)^(1/m) (1 + R^m)^-n int e^v + c int |grad v|^n >= int mu^(1/m)

    with c = (n-1)/n^2 as published, or c = (n-1)/(n^2 eps_max) when
    ``sharp`` is set (the constant its derivation actually yields, which is
    attained at v = log mu_n - log mu_n(R)).  ``constraint_residual`` is
    mu_n(R) int e^v - theta_R; the derivation covers only fields where it is 0.
    """
    _require_zero_trace(v)
    _check_radius(v.grid, R)
    _exp_guard(v)
    n, m = d.n, d.m
    Rg = v.grid.R
    grid = v.grid
    exp_int = grid.integrate(np.exp(v.values))
    g = v.gradient()
    grad_int = grid.integrate(np.sum(g * g, axis=-1) ** (n / 2.0))
    coef = (n - 1) / n**2
    if sharp:
        coef /= d.eps_max
    lhs = (n / d.omega) ** (1.0 / m) * (1.0 + Rg**m) ** (-n) * exp_int + coef * grad_int
    rhs = grid.integrate(_mu_weight(grid, d) ** (1.0 / m))
    resid = d.boundary_value(Rg) * exp_int - theta(Rg, d)
    return CorollaryReport(lhs, rhs, lhs - rhs, exp_int, grad_int, resid, sharp)


def corollary_field(u: GridFunction, d: ModelDensity) -> GridFunction:
    """v = u + log mu_n - log mu_n(R); zero-trace whenever u is."""
    r = _radius(u.grid)
    shift = d.log_profile(r) - d.log_profile(u.grid.R)
    shift[-1] = 0.0
    return GridFunction(u.values + shift, u.grid)


def sphere_onofri(u: np.ndarray, grid: SphereGrid) -> float:
    """(1/4) int |grad u|^2 d omega + int u d omega - log int e^u d omega."""
    u = np.asarray(u, dtype=float)
    top = float(np.max(u))
    if top > EXP_LIMIT:
        raise RangeError(f"max u = {top:.3g} overflows exp(u); rescale the field amplitude")
    # divide by the discrete total so the averages are exact for constants
    total = grid.integrate(np.ones_like(u))
    mean = grid.integrate(u) / total
    # shift by the mean so the log term sees a centred field
    log_term = math.log(grid.integrate(np.exp(u - mean)) / total) + mean
    return 0.25 * grid.dirichlet(u) + mean - log_term


def constraint_scale(w: GridFunction, R: float | None, d: ModelDensity,
                     s_max: float = 50.0) -> GridFunction:
    """Rescale w so that int e^u d mu_n = theta_R; returns u = s w with s != 0.

    s -> int e^(s w) d mu_n is strictly convex and passes through theta_R at
    s = 0 (up to quadrature error); the other crossing lies beyond its minimum,
    on the side opposite to sign(int w d mu_n).
    """
    _require_zero_trace(w)
    _check_radius(w.grid, R)
    _dim(w.grid, d)
    weight = _mu_weight(w.grid, d)
    target = theta(w.grid.R, d)
    first = w.integrate(weight)
    if abs(first) < 1e-10:
        raise DegenerateError("int w d mu vanishes; s = 0 is the only root")
    vals = w.values
    top = float(np.max(np.abs(vals)))
    if top == 0.0:
        raise DegenerateError("w is identically zero")

    def phi(s):
        return w.grid.integrate(np.expm1(s * vals) * weight) + (w.grid.integrate(weight) - target)

    direction = -math.copysign(1.0, first)
    if np.all(direction * w.interior <= 1e-12 * top):
        # e^(s w) <= 1 on the whole far side, so the map never returns to theta_R
        raise DegenerateError("w does not change sign; s = 0 is the only root")
    lim = min(s_max, EXP_LIMIT / top)
    res = minimize_scalar(phi, bounds=(0.0, lim) if direction > 0 else (-lim, 0.0), method="bounded",
                          options={"xatol": 1e-12})
    s_min = float(res.x)
    if phi(s_min) >= 0.0:
        raise DegenerateError("could not separate the nonzero root from s = 0")
    far = s_min
    step = max(abs(s_min), 1e-3)
    while phi(far) < 0.0:
        far += direction * step
        step *= 2.0
        if abs(far) > s_max:
            raise RangeError(f"scaling root lies outside [-{s_max}, {s_max}]")
    s = brentq(phi, min(s_min, far), max(s_min, far), xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return GridFunction(s * vals, w.grid)


def _cutoff(r: np.ndarray, R: float) -> np.ndarray:
    return np.clip(1.0 - (r / R) ** 2, 0.0, None) ** 2


def random_field(grid: Grid, rng: np.random.Generator, max_bumps: int = 5,
                 amplitude: float = 2.0, support: float | None = None,
                 center_radius: float | None = None) -> GridFunction:
    """Sum of <= max_bumps Gaussian bumps times (1 - r^2/S^2)_+^2, zero trace.

    ``support`` (S, default the grid radius) bounds the support; bumps are
    centred within ``center_radius``.  On radial grids bumps are functions of
    r^2, which keeps the field smooth through the origin.
    """
    S = grid.R if support is None else min(support, grid.R)
    cr = 0.7 * min(S, 3.0) if center_radius is None else center_radius
    k = int(rng.integers(1, max_bumps + 1))
    amps = rng.uniform(-amplitude, amplitude, size=k)
    widths = rng.uniform(0.15, 0.6, size=k) * min(S, 3.0)
    if isinstance(grid, DiskGrid):
        x, y = grid.xy
        rad = np.sqrt(rng.uniform(0, 1, size=k)) * cr
        ang = rng.uniform(0, 2 * np.pi, size=k)
        vals = np.zeros(grid.shape)
        for a, s, c_r, c_t in zip(amps, widths, rad, ang):
            cx, cy = c_r * np.cos(c_t), c_r * np.sin(c_t)
            vals += a * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * s * s))
        r = grid.radius
    else:
        r = grid.r_eval
        centers = rng.uniform(0, cr, size=k)
        vals = np.zeros_like(r)
        for a, s, c in zip(amps, widths, centers):
            vals += a * np.exp(-((r**2 - c**2) ** 2) / (2 * (s * max(s, c)) ** 2))
    vals = vals * _cutoff(r, S)
    vals[-1] = 0.0
    top = np.max(np.abs(vals))
    if top > 30.0:
        vals *= 30.0 / top
    return GridFunction(vals, grid)


def random_admissible(grid: Grid, rng: np.random.Generator, d: ModelDensity,
                      max_tries: int = 100, **kwargs) -> GridFunction:
    """Draw random fields until one can be scaled onto the exponential constraint."""
    for _ in range(max_tries):
        w = random_field(grid, rng, **kwargs)
        try:
            return constraint_scale(w, grid.R, d)
        except (DegenerateError, RangeError):
            continue
    raise DegenerateError(f"no admissible field after {max_tries} draws")


def random_density(grid: Grid, rng: np.random.Generator, mass: float | None = None,
                   strength: float = 1.5) -> DensityFunction:
    """Strictly positive smooth density exp(random bumps), optionally normalised."""
    w = random_field(grid, rng, amplitude=strength, support=grid.R * 1.5)
    rho = DensityFunction(np.exp(w.values), grid)
    return rho if mass is None else rho.with_mass(mass)


def random_sphere_field(grid: SphereGrid, rng: np.random.Generator, lmax: int = 4,
                        amplitude: float = 1.0) -> np.ndarray:
    """Random real combination of spherical harmonics of degree 1..lmax."""
    u = np.zeros(grid.shape)
    for l in range(1, lmax + 1):
        for m in range(l + 1):
            u += rng.normal(scale=amplitude / l) * grid.harmonic(l, m, "cos")
            if m:
                u += rng.normal(scale=amplitude / l) * grid.harmonic(l, m, "sin")
    return u
