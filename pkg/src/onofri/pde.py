"""Rescaled fast diffusion on B_R and constrained minimisation of I_R (n = 2).

Fast diffusion
--------------
    d_t rho = (1/(2 sqrt(pi))) Delta sqrt(rho) + div(x rho)
            = div(rho grad xi),   xi = |x|^2/2 - 1/(2 sqrt(pi rho)),

with zero total flux through r = R.  Radial finite volumes on uniform cells
carry cell averages rho_i.  The confinement |x|^2/2 is replaced by the cell
potential V_i = (1/sqrt(pi mu_i) - 1)/2, where mu_i is the exact cell average
of mu_2; V_i = r_i^2/2 + O(h^2), and with it the cell averages of mu_2 make
xi constant, so they are an exact discrete equilibrium.  Interface fluxes are
upwinded in rho.  The discrete free energy

    J_h = sum_i vol_i (2/sqrt(pi) sqrt(rho_i) - 2 V_i rho_i)

is nondecreasing along the semi-discrete flow, and along backward Euler
steps (J_h is concave).

Minimisation
------------
Tangent-space descent for I_R on {int e^u d mu_2 = theta_R}, preconditioned
by P = -(1/8 pi) Delta with Dirichlet data, so the Sobolev gradient of I_R is
u + P^-1 mu_2.  Iterates are pulled back onto the constraint along
phi = P^-1 mu_2 > 0.
"""

from __future__ import annotations

import io
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from .densities import ModelDensity, theta
from .functionals import ConstraintError, DensityFunction, GridFunction, onofri_energy_2d
from .geometry import DirichletPoisson, DiskGrid, RadialGrid, laplacian_disk
from .transport import cumulative_mass

__all__ = [
    "StabilityError",
    "LineSearchError",
    "EvolutionState",
    "Trajectory",
    "fd_step",
    "fd_evolve",
    "cfl_bound",
    "MinimizerOptions",
    "MinimizerState",
    "minimize_onofri",
    "euler_lagrange_residual",
    "recover_multiplier",
]

SQRT_PI = math.sqrt(math.pi)
RHO_FLOOR = 1e-12


class StabilityError(RuntimeError):
    """An explicit step produced a negative density; ``suggested_dt`` is safe."""

    def __init__(self, message: str, suggested_dt: float):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class LineSearchError(RuntimeError):
    """The minimiser could not find a step that does not increase I_R."""


def _mu2_cell_averages(edges: np.ndarray) -> np.ndarray:
    # mass of mu_2 on B_r is r^2 / (1 + r^2)
    F = edges**2 / (1.0 + edges**2)
    return np.diff(F) / (np.pi * np.diff(edges**2))


@dataclass(frozen=True)
class EvolutionState:
    """Cell averages of a radial planar density with cell edges and time."""

    rho: np.ndarray = field(repr=False)
    t: float
    mass0: float
    edges: np.ndarray = field(repr=False)

    def __post_init__(self):
        rho = np.array(self.rho, dtype=float)
        edges = np.array(self.edges, dtype=float)
        if edges.shape != (rho.size + 1,) or edges[0] != 0.0 or np.any(np.diff(edges) <= 0):
            raise ValueError("edges must increase from 0 and bracket every cell")
        if np.any(rho < 0) or not np.all(np.isfinite(rho)):
            raise ValueError("density must be finite and nonnegative")
        rho.setflags(write=False)
        edges.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_profile(cls, profile: Callable, R: float, n_cells: int = 200) -> "EvolutionState":
        """Exact-as-quadrature cell averages of a radial profile on uniform cells."""
        edges = np.linspace(0.0, R, n_cells + 1)
        F = cumulative_mass(profile, 2, edges)
        rho = np.diff(F) / (np.pi * np.diff(edges**2))
        state = cls(rho, 0.0, 0.0, edges)
        return replace(state, mass0=state.mass)

    @classmethod
    def model(cls, R: float, n_cells: int = 200) -> "EvolutionState":
        edges = np.linspace(0.0, R, n_cells + 1)
        state = cls(_mu2_cell_averages(edges), 0.0, 0.0, edges)
        return replace(state, mass0=state.mass)

    @property
    def R(self) -> float:
        return float(self.edges[-1])

    @property
    def volumes(self) -> np.ndarray:
        return np.pi * np.diff(self.edges**2)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def mass(self) -> float:
        return float(self.volumes @ self.rho)


@dataclass(frozen=True)
class _Geometry:
    vol: np.ndarray
    area: np.ndarray      # 2 pi e at interior interfaces
    dist: np.ndarray      # centre spacing across interior interfaces
    potential: np.ndarray
    mu_bar: np.ndarray


def _geometry(edges: np.ndarray) -> _Geometry:
    c = 0.5 * (edges[1:] + edges[:-1])
    mu_bar = _mu2_cell_averages(edges)
    return _Geometry(np.pi * np.diff(edges**2), 2.0 * np.pi * edges[1:-1], np.diff(c),
                     0.5 * (1.0 / np.sqrt(np.pi * mu_bar) - 1.0), mu_bar)


def _xi(rho, geo: _Geometry, drift: bool, diffusion: bool):
    xi = geo.potential.copy() if drift else np.zeros_like(rho)
    if diffusion:
        xi = xi - 0.5 / np.sqrt(np.pi * np.maximum(rho, RHO_FLOOR))
    return xi


def _fluxes(rho, geo: _Geometry, drift: bool, diffusion: bool) -> np.ndarray:
    """Outward flux through each interface, zero at r = 0 and r = R."""
    xi = _xi(rho, geo, drift, diffusion)
    dxi = np.diff(xi)
    up = np.where(dxi < 0.0, rho[:-1], rho[1:])
    F = np.zeros(rho.size + 1)
    F[1:-1] = -up * geo.area * dxi / geo.dist
    return F


def _rate(rho, geo, drift, diffusion):
    return -np.diff(_fluxes(rho, geo, drift, diffusion)) / geo.vol


def cfl_bound(state: EvolutionState, drift: bool = True, diffusion: bool = True) -> float:
    """Largest explicit dt that keeps the scheme positive (with a 0.9 margin)."""
    geo = _geometry(state.edges)
    rho = np.maximum(state.rho, RHO_FLOOR)
    h = float(np.min(geo.dist))
    rate = 0.0
    if diffusion:
        # d(xi)/d(rho) = 1/(4 sqrt(pi) rho^(3/2)), so the effective diffusivity is rho * that
        D = 1.0 / (4.0 * SQRT_PI * np.sqrt(rho))
        rate += 2.0 * float(np.max(D)) / h**2 * 2.0
    if drift:
        rate += state.R / h * 2.0
    return 0.9 / rate if rate > 0 else math.inf


def _explicit(state: EvolutionState, dt: float, geo, drift, diffusion) -> np.ndarray:
    new = state.rho + dt * _rate(state.rho, geo, drift, diffusion)
    if np.any(new < 0.0):
        raise StabilityError(f"negative density after explicit step dt={dt:.3e}",
                             cfl_bound(state, drift, diffusion))
    return new


def _implicit(state: EvolutionState, dt: float, geo, drift, diffusion,
              tol: float = 1e-13, max_newton: int = 50) -> np.ndarray:
    """Backward Euler by Newton with a three-colour finite-difference Jacobian."""
    old = state.rho
    N = old.size

    def G(x):
        return geo.vol * (x - old) + dt * np.diff(_fluxes(x, geo, drift, diffusion))

    x = old.copy()
    scale = float(geo.vol @ old) or 1.0
    for _ in range(max_newton):
        g = G(x)
        if np.max(np.abs(g)) < tol * scale:
            break
        band = np.zeros((3, N))
        for colour in range(3):
            cols = np.arange(colour, N, 3)
            h = 1e-7 * np.maximum(np.abs(x[cols]), 1e-8)
            xp = x.copy()
            xp[cols] += h
            dG = G(xp) - g
            for j, hj in zip(cols, h):
                lo, hi = max(j - 1, 0), min(j + 2, N)
                for i in range(lo, hi):
                    band[1 + i - j, j] = dG[i] / hj
        step = solve_banded((1, 1), band, -g)
        lam = 1.0
        while np.any(x + lam * step < 0.0):
            lam *= 0.5
            if lam < 1e-8:
                raise StabilityError("Newton iterate left the positive cone", dt / 2.0)
        x = x + lam * step
    else:
        raise StabilityError(f"Newton did not converge at dt={dt:.3e}", dt / 2.0)
    return x


def fd_step(state: EvolutionState, dt: float, scheme: str = "explicit", drift: bool = True,
            diffusion: bool = True) -> EvolutionState:
    """One finite-volume step; mass is conserved by flux telescoping."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    geo = _geometry(state.edges)
    if scheme == "explicit":
        new = _explicit(state, dt, geo, drift, diffusion)
    elif scheme == "implicit":
        new = _implicit(state, dt, geo, drift, diffusion)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return EvolutionState(new, state.t + dt, state.mass0, state.edges)


def discrete_free_energy(state: EvolutionState) -> float:
    geo = _geometry(state.edges)
    rho = state.rho
    return float(geo.vol @ (2.0 / SQRT_PI * np.sqrt(rho) - 2.0 * geo.potential * rho))


def l1_to_model(state: EvolutionState) -> float:
    geo = _geometry(state.edges)
    return float(geo.vol @ np.abs(state.rho - geo.mu_bar))


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray = field(repr=False)
    l1_distance: np.ndarray = field(repr=False)
    J_value: np.ndarray = field(repr=False)
    mass: np.ndarray = field(repr=False)
    final: EvolutionState = field(repr=False)
    scheme: str
    dt: float
    timed_out: bool = False

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,L1_distance,J_value,mass\n")
        for row in zip(self.t, self.l1_distance, self.J_value, self.mass):
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()


def fd_evolve(initial, R: float, t_final: float, dt: float = 0.01, n_cells: int = 200,
              scheme: str = "auto", record_every: int = 1, max_steps: int = 1_000_000,
              drift: bool = True, diffusion: bool = True) -> Trajectory:
    """Integrate to ``t_final`` and record distance to mu_2, J_h and mass.

    ``initial`` is an :class:`EvolutionState`, a radial profile callable or a
    radial :class:`DensityFunction` carrying its profile.  Initial data whose
    mass differs from theta_R is rescaled with a warning.  ``scheme="auto"``
    runs explicit steps when ``dt`` is below the positivity bound and
    backward Euler otherwise.
    """
    if isinstance(initial, EvolutionState):
        state = initial
    else:
        profile = initial.profile if isinstance(initial, DensityFunction) else initial
        if profile is None:
            raise ValueError("initial density must carry its radial profile")
        state = EvolutionState.from_profile(profile, R, n_cells)
    if not math.isclose(state.R, R, rel_tol=1e-12):
        raise ValueError(f"state radius {state.R} does not match R = {R}")
    th = theta(R, ModelDensity(2))
    if abs(state.mass - th) > 1e-12:
        warnings.warn(f"initial mass {state.mass:.12g} rescaled to theta_R = {th:.12g}",
                      RuntimeWarning, stacklevel=2)
        state = EvolutionState(state.rho * (th / state.mass), state.t, 0.0, state.edges)
    state = replace(state, mass0=state.mass)

    if scheme == "auto":
        scheme = "explicit" if dt <= cfl_bound(state, drift, diffusion) else "implicit"
    n_steps = int(math.ceil(t_final / dt - 1e-12))
    timed_out = n_steps > max_steps
    n_steps = min(n_steps, max_steps)

    ts, l1, J, mass = [], [], [], []

    def record(s):
        ts.append(s.t)
        l1.append(l1_to_model(s))
        J.append(discrete_free_energy(s))
        mass.append(s.mass)

    record(state)
    for k in range(n_steps):
        h = min(dt, t_final - state.t) if k == n_steps - 1 and not timed_out else dt
        if h <= 0:
            break
        state = fd_step(state, h, scheme, drift, diffusion)
        if (k + 1) % record_every == 0 or k == n_steps - 1:
            record(state)
    if timed_out:
        warnings.warn(f"step budget exhausted at t={state.t:.4g}; final L1 distance {l1[-1]:.3e}",
                      RuntimeWarning, stacklevel=2)
    return Trajectory(np.array(ts), np.array(l1), np.array(J), np.array(mass), state,
                      scheme, dt, timed_out)


# --------------------------------------------------------------------------- minimisation


@dataclass(frozen=True)
class MinimizerOptions:
    max_iter: int = 200
    tol: float = 1e-12
    step: float = 1.0
    min_step: float = 1e-10


@dataclass(frozen=True)
class MinimizerState:
    u: GridFunction = field(repr=False)
    lam: float
    objective: float
    residual: float
    iterations: int
    history: tuple = field(default=(), repr=False)

    @property
    def final_norm(self) -> float:
        return float(np.max(np.abs(self.u.values)))

    def to_json(self) -> str:
        return json.dumps({"iterations": self.iterations, "final_norm": self.final_norm,
                           "lambda": self.lam, "residual": self.residual,
                           "objective": self.objective})


def euler_lagrange_residual(u: GridFunction, lam: float, R: float | None = None,
                            width: int = 7) -> float:
    """sup over interior nodes of |(1/8 pi) Delta u + lam mu_2 e^u - mu_2|."""
    grid = u.grid
    if not isinstance(grid, DiskGrid):
        raise ValueError("the Euler-Lagrange residual is defined for planar disk fields")
    if R is not None and not math.isclose(R, grid.R, rel_tol=1e-12):
        raise ValueError(f"radius {R} does not match grid radius {grid.R}")
    mu = ModelDensity(2).profile(grid.radius)
    res = laplacian_disk(u.values, grid, width) / (8.0 * np.pi) + lam * mu * np.exp(u.values) - mu
    return float(np.max(np.abs(res[:-1])))


def recover_multiplier(u: GridFunction, width: int = 7) -> float:
    """Least-squares lambda for the Euler-Lagrange equation over interior nodes."""
    grid = u.grid
    mu = ModelDensity(2).profile(grid.radius)
    a = (mu * np.exp(u.values))[:-1]
    b = (mu - laplacian_disk(u.values, grid, width) / (8.0 * np.pi))[:-1]
    return float(np.sum(a * b) / np.sum(a * a))


def minimize_onofri(R: float, d: ModelDensity, init: GridFunction,
                    opts: MinimizerOptions | None = None) -> MinimizerState:
    """Minimise I_R over zero-trace u with int e^u d mu_2 = theta_R (n = 2 only)."""
    opts = opts or MinimizerOptions()
    if d.n != 2:
        raise ValueError("minimisation is implemented for n = 2")
    grid = init.grid
    if not isinstance(grid, DiskGrid) or not math.isclose(grid.R, R, rel_tol=1e-12):
        raise ValueError("init must live on a DiskGrid of radius R")
    if not init.zero_trace:
        raise ConstraintError("init must vanish on the boundary")
    th = theta(R, d)
    mu = d.profile(grid.radius)
    solver = DirichletPoisson(grid)

    def P_inv(f):
        return 8.0 * np.pi * solver.solve(f)

    phi = P_inv(mu)

    def C(v):
        return grid.integrate(np.exp(v) * mu) - th

    def retract(v):
        # C(v + s phi) is increasing in s because phi > 0 inside the disk
        if abs(C(v)) <= 1e-14 * th:
            return v
        lo, hi = -1.0, 1.0
        while C(v + lo * phi) > 0:
            lo *= 2.0
        while C(v + hi * phi) < 0:
            hi *= 2.0
        s = brentq(lambda s: C(v + s * phi), lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps)
        return v + s * phi

    def I(v):
        return onofri_energy_2d(GridFunction(v, grid), R)

    u = retract(init.values.copy())
    f = I(u)
    history = [f]
    tau = opts.step
    it = 0
    for it in range(1, opts.max_iter + 1):
        eu = np.exp(u) * mu
        d_I = u + phi
        d_C = P_inv(eu)
        lam = grid.integrate(eu * d_I) / grid.integrate(eu * d_C)
        direction = d_I - lam * d_C
        if np.max(np.abs(direction)) <= 1e-13 * np.max(np.abs(d_I)):
            break
        tau = min(opts.step, 2.0 * tau)
        while True:
            trial = retract(u - tau * direction)
            f_trial = I(trial)
            if f_trial <= f:
                break
            tau *= 0.5
            if tau < opts.min_step:
                raise LineSearchError(f"no decreasing step at iteration {it} (I = {f:.3e})")
        decrease = f - f_trial
        u, f = trial, f_trial
        history.append(f)
        if decrease < opts.tol:
            break
    field_u = GridFunction(u, grid)
    lam = recover_multiplier(field_u)
    return MinimizerState(field_u, lam, f, euler_lagrange_residual(field_u, lam), it, tuple(history))
