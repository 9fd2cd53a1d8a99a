"""Radial Brenier maps, the Monge-Ampere check and the displacement inequality.

Between two radial densities on B_R the quadratic-cost optimal map is radial,
T(x) = t(|x|) x / |x|, with t = F1^-1 o F0 where F_k(r) is the mass of rho_k
on B_r.  Tiny weighted point clouds are solved by enumeration as an
independent oracle.
"""

from __future__ import annotations

import io
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .functionals import ConstraintError, DensityFunction
from .geometry import RadialGrid, omega, radial_derivative

__all__ = [
    "SizeError",
    "IllConditionedWarning",
    "MonotoneRadialMap",
    "LemmaReport",
    "OTResult",
    "cumulative_mass",
    "radial_brenier",
    "monge_ampere_residual",
    "lemma1_check",
    "discrete_ot_oracle",
    "is_cyclically_monotone",
    "random_radial_profile",
    "random_radial_pair",
]

DENSITY_FLOOR = 1e-12
MASS_TOL = 1e-10
PUSHFORWARD_TOL = 1e-8
MAX_ORACLE_POINTS = 8

_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)
_PANELS = 6


class SizeError(ValueError):
    """Raised when the enumeration oracle would be asked for too many points."""


class IllConditionedWarning(RuntimeWarning):
    """A density vanishes on part of the ball, so its CDF is nearly flat there."""


def cumulative_mass(profile: Callable, n: int, r) -> np.ndarray:
    """F(r) = omega_n int_0^r rho(s) s^(n-1) ds for each entry of ``r``.

    The integral is mapped to s = r t, t in [0, 1], and evaluated with a fixed
    composite Gauss-Legendre rule, so F is smooth in r and vectorised.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    edges = np.linspace(0.0, 1.0, _PANELS + 1)
    half = 0.5 * np.diff(edges)
    t = (edges[:-1, None] + half[:, None] * (_GL_X[None, :] + 1.0)).ravel()
    w = (half[:, None] * _GL_W[None, :]).ravel()
    s = r[:, None] * t[None, :]
    vals = np.maximum(np.asarray(profile(s), dtype=float), DENSITY_FLOOR)
    return omega(n) * r**n * ((vals * t ** (n - 1)) @ w)


def _inverse_cdf(profile: Callable, n: int, R: float, targets: np.ndarray) -> np.ndarray:
    total = float(cumulative_mass(profile, n, R)[0])
    out = np.empty_like(targets)
    for i, m in enumerate(targets):
        if m <= 0.0:
            out[i] = 0.0
        elif m >= total:
            out[i] = R
        else:
            out[i] = brentq(lambda s: cumulative_mass(profile, n, s)[0] - m, 0.0, R,
                            xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return out


@dataclass(frozen=True)
class MonotoneRadialMap:
    """Radial profile t of a Brenier map sampled at source radii.

    ``function`` evaluates t at arbitrary radii (kept for composition and
    inverse checks; excluded from equality and serialization).
    """

    r: np.ndarray = field(repr=False)
    T: np.ndarray = field(repr=False)
    R: float
    n: int
    floored_nodes: tuple = ()
    pushforward_error: float = 0.0
    function: Callable | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        r = np.array(self.r, dtype=float)
        T = np.array(self.T, dtype=float)
        if r.shape != T.shape:
            raise ValueError("radii and images must have the same shape")
        if np.any(np.diff(T) < -1e-13):
            i = int(np.argmin(np.diff(T)))
            raise ValueError(f"map is not monotone between nodes {i} and {i + 1}")
        if np.any(T < -1e-13) or np.any(T > self.R * (1 + 1e-13)):
            raise ValueError("map leaves the ball")
        T = np.clip(np.maximum.accumulate(T), 0.0, self.R)
        r.setflags(write=False)
        T.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "T", T)

    def __call__(self, s):
        if self.function is None:
            return np.interp(s, self.r, self.T)
        return self.function(s)

    def boundary_term(self) -> float:
        """Radial surrogate T(R) R of the boundary pairing; at most R^2."""
        return float(self.T[-1]) * self.R

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("r,T\n")
        for a, b in zip(self.r, self.T):
            buf.write(f"{float(a)!r},{float(b)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, n: int, R: float) -> "MonotoneRadialMap":
        data = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], R, n)


def _profile_of(rho: DensityFunction) -> Callable:
    if rho.profile is None:
        raise ValueError("radial transport needs densities built from a radial profile")
    if not isinstance(rho.grid, RadialGrid):
        raise ValueError("radial transport needs densities on a RadialGrid")
    return rho.profile


def radial_brenier(rho0: DensityFunction, rho1: DensityFunction,
                   grid: RadialGrid | None = None) -> MonotoneRadialMap:
    """Optimal map t = F1^-1 o F0 at the evaluation radii of ``grid``."""
    grid = grid or rho0.grid
    p0, p1 = _profile_of(rho0), _profile_of(rho1)
    n, R = grid.n, grid.R
    m0 = float(cumulative_mass(p0, n, R)[0])
    m1 = float(cumulative_mass(p1, n, R)[0])
    if abs(m0 - m1) > MASS_TOL * max(m0, m1):
        raise ConstraintError(f"masses differ: {m0!r} vs {m1!r}")

    r = grid.r_eval
    floored = []
    for p in (p0, p1):
        floored += [int(i) for i in np.flatnonzero(np.asarray(p(r)) < DENSITY_FLOOR)]
    floored = tuple(sorted(set(floored)))
    if floored:
        warnings.warn(f"density below {DENSITY_FLOOR} at nodes {list(floored)}; "
                      "map is ill-conditioned there", IllConditionedWarning, stacklevel=2)

    def t_of(s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return _inverse_cdf(p1, n, R, cumulative_mass(p0, n, s) * (m1 / m0))

    T = t_of(r)
    err = float(np.max(np.abs(cumulative_mass(p1, n, T) * (m0 / m1) - cumulative_mass(p0, n, r))))
    if err > PUSHFORWARD_TOL:
        raise ArithmeticError(f"pushforward check failed: max error {err:.3e}")
    return MonotoneRadialMap(r, T, R, n, floored, err, t_of)


def monge_ampere_residual(tmap: MonotoneRadialMap, rho0: DensityFunction,
                          rho1: DensityFunction, grid: RadialGrid | None = None,
                          width: int = 3) -> float:
    """sup_i |rho0(r_i) - rho1(t_i) t'(r_i) (t_i / r_i)^(n-1)|.

    t' uses ``width``-point finite differences (second order for the default 3,
    one-sided at r = R, odd reflection through the origin).
    """
    grid = grid or rho0.grid
    n = grid.n
    p0, p1 = _profile_of(rho0), _profile_of(rho1)
    r, T = tmap.r, np.asarray(tmap.T)
    dT = radial_derivative(T, grid, parity=-1, width=width)
    jac = dT * (T / r) ** (n - 1)
    return float(np.max(np.abs(p0(r) - p1(T) * jac)))


@dataclass(frozen=True)
class LemmaReport:
    n: int
    R: float
    lhs: float
    rhs: float
    slack: float

    def as_dict(self) -> dict:
        return {"n": self.n, "R": self.R, "lhs": self.lhs, "rhs": self.rhs, "slack": self.slack}


def lemma1_check(rho0: DensityFunction, rho1: DensityFunction, grid: RadialGrid | None = None,
                 n: int | None = None, width: int = 7) -> LemmaReport:
    """int rho1^(1-1/n) <= (1/n) int rho0^(1-1/n) div T, with div T = t' + (n-1) t / r."""
    grid = grid or rho0.grid
    if n is not None and n != grid.n:
        raise ValueError(f"dimension {n} does not match grid dimension {grid.n}")
    n = grid.n
    tmap = radial_brenier(rho0, rho1, grid)
    r, T = tmap.r, np.asarray(tmap.T)
    div = radial_derivative(T, grid, parity=-1, width=width) + (n - 1) * T / r
    q = 1.0 - 1.0 / n
    p0, p1 = _profile_of(rho0), _profile_of(rho1)
    lhs = grid.integrate(p1(r) ** q)
    rhs = grid.integrate(p0(r) ** q * div) / n
    return LemmaReport(n, grid.R, float(lhs), float(rhs), float(rhs - lhs))


@dataclass(frozen=True)
class OTResult:
    pairing: tuple
    cost: float


def _as_cloud(points, weights):
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    w = np.full(len(x), 1.0 / len(x)) if weights is None else np.asarray(weights, dtype=float)
    return x, w


def discrete_ot_oracle(points0, points1, weights0=None, weights1=None) -> OTResult:
    """Quadratic-cost optimal pairing of two uniform clouds by enumeration.

    cost = sum_i w_i |x_i - y_sigma(i)|^2 / 2, minimised over all permutations.
    """
    x, w0 = _as_cloud(points0, weights0)
    y, w1 = _as_cloud(points1, weights1)
    k = len(x)
    if k > MAX_ORACLE_POINTS or len(y) > MAX_ORACLE_POINTS:
        raise SizeError(f"at most {MAX_ORACLE_POINTS} points per cloud (got {k}, {len(y)})")
    if len(y) != k or x.shape[1] != y.shape[1]:
        raise ValueError("clouds must have equal cardinality and dimension")
    if not math.isclose(w0.sum(), w1.sum(), rel_tol=1e-12):
        raise ConstraintError("clouds must carry equal total weight")
    if np.ptp(w0) > 1e-14 * w0.max() or np.ptp(w1) > 1e-14 * w1.max() or abs(w0[0] - w1[0]) > 1e-14:
        raise ValueError("only uniform, equal weights are supported")
    C = 0.5 * np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1) * w0[:, None]
    best, best_cost = None, math.inf
    rows = np.arange(k)
    for perm in itertools.permutations(range(k)):
        c = float(C[rows, perm].sum())
        if c < best_cost - 1e-15:
            best, best_cost = perm, c
    return OTResult(tuple(best), best_cost)


def is_cyclically_monotone(points0, points1, pairing, tol: float = 1e-12) -> bool:
    """True if no cycle of the pairs {(x_i, y_pairing(i))} lowers sum <x_i, y>."""
    x, _ = _as_cloud(points0, None)
    y, _ = _as_cloud(points1, None)
    yp = y[list(pairing)]
    G = x @ yp.T
    base = float(np.trace(G))
    k = len(x)
    rows = np.arange(k)
    return all(G[rows, perm].sum() <= base + tol for perm in itertools.permutations(range(k)))


def random_radial_profile(rng: np.random.Generator, R: float, strength: float = 1.5,
                          max_bumps: int = 4) -> Callable:
    """Strictly positive smooth radial profile exp(sum of bumps in r^2)."""
    k = int(rng.integers(1, max_bumps + 1))
    amps = rng.uniform(-strength, strength, size=k)
    centers = rng.uniform(0.0, R, size=k)
    widths = rng.uniform(0.15, 0.6, size=k) * R

    def profile(r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for a, c, s in zip(amps, centers, widths):
            out = out + a * np.exp(-((r * r - c * c) ** 2) / (2.0 * (s * max(s, c)) ** 2))
        return np.exp(out)

    return profile


def random_radial_pair(grid: RadialGrid, rng: np.random.Generator, mass: float | None = None,
                       strength: float = 1.5) -> tuple[DensityFunction, DensityFunction]:
    """Two random radial densities of equal mass (default: the mass of the first)."""
    n, R = grid.n, grid.R
    out = []
    for _ in range(2):
        p = random_radial_profile(rng, R, strength)
        target = mass if mass is not None else (out[0][1] if out else None)
        m = float(cumulative_mass(p, n, R)[0])
        s = 1.0 if target is None else target / m
        scaled = (lambda r, p=p, s=s: s * p(r))
        out.append((scaled, m * s))
    return tuple(DensityFunction.from_profile(p, grid) for p, _ in out)
