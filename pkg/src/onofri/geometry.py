"""Grids, quadrature and discrete differential operators on balls and on S^2.

Radial directions use composite Gauss-Legendre panels on (0, R) with the
volume factor ``omega_n r^(n-1)`` folded into the weights.  Angular directions
on the disk use the uniform trapezoid rule, which is spectrally accurate for
periodic integrands.  Every grid carries one extra evaluation ring at r = R
(weight zero, excluded from quadrature) so boundary traces can be checked.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

__all__ = [
    "GridError",
    "GridTooSmallError",
    "EvaluationError",
    "omega",
    "RadialGrid",
    "DiskGrid",
    "SphereGrid",
    "integrate_radial",
    "integrate_disk",
    "gradient_disk",
    "radial_derivative",
    "laplacian_disk",
    "fd_weights",
]

DEFAULT_RADIAL_NODES = 128
DEFAULT_ANGULAR_NODES = 128
DEFAULT_STENCIL = 7


class GridError(ValueError):
    """Raised when sampled data and a grid do not fit together."""


class GridTooSmallError(GridError):
    pass


class EvaluationError(ValueError):
    """Raised when an integrand is not finite at some quadrature node."""


def omega(n: int) -> float:
    """Surface area of the unit sphere in R^n (even/odd recursion)."""
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    w = 2.0 if n % 2 else 2.0 * np.pi
    k = 1 if n % 2 else 2
    while k < n:
        w *= 2.0 * np.pi / k
        k += 2
    return w


def _panel_edges(R: float) -> np.ndarray:
    # one panel for moderate radii, geometric panels beyond radius 1 otherwise
    if R <= 2.0:
        return np.array([0.0, R])
    edges = [0.0, 1.0]
    while edges[-1] * 2.0 < R:
        edges.append(edges[-1] * 2.0)
    if R - edges[-1] < 0.25 * (edges[-1] - edges[-2]):
        edges[-1] = R
    else:
        edges.append(R)
    return np.asarray(edges)


def _composite_gauss_legendre(R: float, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    edges = _panel_edges(R)
    n_panels = len(edges) - 1
    per_panel = max(8, int(np.ceil(n_nodes / n_panels)))
    x, w = np.polynomial.legendre.leggauss(per_panel)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (b - a) * x + 0.5 * (b + a))
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def fd_weights(x0: float, x: np.ndarray, order: int) -> np.ndarray:
    """Finite-difference weights for derivatives 0..order at ``x0`` (Fornberg).

    Returns an array of shape ``(order + 1, len(x))``.
    """
    x = np.asarray(x, dtype=float)
    npts = len(x)
    c = np.zeros((order + 1, npts))
    c1, c4 = 1.0, x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, npts):
        mn = min(i, order)
        c2, c5 = 1.0, c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def _radial_matrices(r_eval: np.ndarray, parity: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """First and second radial derivative matrices on ``r_eval``.

    Ghost points at ``-r_i`` carry ``parity * u(r_i)``: +1 for functions even
    through the origin, -1 for odd ones.  The last node (r = R) is real, so the
    stencil closes one-sidedly there.
    """
    n = len(r_eval)
    inner = r_eval[:-1]
    ext = np.concatenate([-inner[::-1], r_eval])
    # column index in r_eval and sign for each extended point
    cols = np.concatenate([np.arange(n - 2, -1, -1), np.arange(n)])
    signs = np.concatenate([np.full(n - 1, float(parity)), np.ones(n)])
    offset = n - 1
    half = width // 2
    D1 = np.zeros((n, n))
    D2 = np.zeros((n, n))
    for i in range(n):
        centre = offset + i
        lo = max(0, min(centre - half, len(ext) - width))
        idx = np.arange(lo, lo + width)
        w = fd_weights(r_eval[i], ext[idx], 2)
        np.add.at(D1[i], cols[idx], signs[idx] * w[1])
        np.add.at(D2[i], cols[idx], signs[idx] * w[2])
    return D1, D2


@dataclass(frozen=True)
class RadialGrid:
    """Quadrature for radial integrands on the ball B_R in R^n.

    ``nodes`` and ``weights`` satisfy ``sum(w * f(r)) ~ int_{B_R} f(|x|) dx``.
    ``r_eval`` appends the boundary radius R; sampled fields live on ``r_eval``.
    """

    n: int
    R: float
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, n: int, R: float, n_nodes: int = DEFAULT_RADIAL_NODES) -> "RadialGrid":
        if n < 2:
            raise ValueError(f"dimension must be >= 2, got {n}")
        if R <= 0:
            raise ValueError(f"radius must be positive, got {R}")
        r, w = _composite_gauss_legendre(float(R), n_nodes)
        w = w * omega(n) * r ** (n - 1)
        r.setflags(write=False)
        w.setflags(write=False)
        return cls(n=n, R=float(R), nodes=r, weights=w)

    @property
    def size(self) -> int:
        return len(self.nodes)

    @cached_property
    def r_eval(self) -> np.ndarray:
        return np.append(self.nodes, self.R)

    def volume(self) -> float:
        return omega(self.n) * self.R**self.n / self.n

    def integrate(self, values: np.ndarray) -> float:
        values = np.asarray(values, dtype=float)
        if values.shape[-1] == self.size + 1:
            values = values[..., :-1]
        if values.shape[-1] != self.size:
            raise GridError(f"expected {self.size} or {self.size + 1} samples, got {values.shape[-1]}")
        return float(np.dot(values, self.weights))

    def derivative_matrices(self, parity: int = 1, width: int = DEFAULT_STENCIL):
        return _cached_matrices(self.r_eval.tobytes(), parity, width)

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "R": self.R, "nodes": self.nodes.tolist(),
                           "weights": self.weights.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "RadialGrid":
        doc = json.loads(text)
        return cls(n=int(doc["n"]), R=float(doc["R"]), nodes=np.asarray(doc["nodes"]),
                   weights=np.asarray(doc["weights"]))


_MATRIX_CACHE: dict = {}


def _cached_matrices(key: bytes, parity: int, width: int):
    k = (key, parity, width)
    if k not in _MATRIX_CACHE:
        r_eval = np.frombuffer(key, dtype=float)
        D1, D2 = _radial_matrices(r_eval, parity, width)
        D1.setflags(write=False)
        D2.setflags(write=False)
        _MATRIX_CACHE[k] = (D1, D2)
    return _MATRIX_CACHE[k]


@dataclass(frozen=True)
class DiskGrid:
    """Polar tensor grid on the disk B_R in R^2.

    Sampled fields have shape ``(n_r + 1, n_theta)``; row ``-1`` is the r = R
    ring.  Quadrature weights have shape ``(n_r, n_theta)``.
    """

    R: float
    r: np.ndarray = field(repr=False)
    radial_weights: np.ndarray = field(repr=False)
    n_theta: int = DEFAULT_ANGULAR_NODES

    @classmethod
    def build(cls, R: float, n_r: int = DEFAULT_RADIAL_NODES,
              n_theta: int = DEFAULT_ANGULAR_NODES) -> "DiskGrid":
        if R <= 0:
            raise ValueError(f"radius must be positive, got {R}")
        if n_theta % 2:
            raise GridError("n_theta must be even (origin reflection pairs theta with theta + pi)")
        r, w = _composite_gauss_legendre(float(R), n_r)
        w = w * r
        r.setflags(write=False)
        w.setflags(write=False)
        return cls(R=float(R), r=r, radial_weights=w, n_theta=n_theta)

    n = 2

    @property
    def n_r(self) -> int:
        return len(self.r)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_r + 1, self.n_theta)

    @cached_property
    def r_eval(self) -> np.ndarray:
        return np.append(self.r, self.R)

    @cached_property
    def theta(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta

    @cached_property
    def weights(self) -> np.ndarray:
        return np.outer(self.radial_weights, np.full(self.n_theta, 2.0 * np.pi / self.n_theta))

    @cached_property
    def radius(self) -> np.ndarray:
        return np.repeat(self.r_eval[:, None], self.n_theta, axis=1)

    @cached_property
    def xy(self) -> tuple[np.ndarray, np.ndarray]:
        rr, tt = np.meshgrid(self.r_eval, self.theta, indexing="ij")
        return rr * np.cos(tt), rr * np.sin(tt)

    def sample(self, f: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
        x, y = self.xy
        return np.broadcast_to(np.asarray(f(x, y), dtype=float), self.shape).copy()

    def integrate(self, values: np.ndarray) -> float:
        return integrate_disk(values, self)

    def derivative_matrices(self, parity: int = 1, width: int = DEFAULT_STENCIL):
        return _cached_matrices(self.r_eval.tobytes(), parity, width)

    def to_json(self) -> str:
        return json.dumps({"n": 2, "R": self.R, "nodes": self.r.tolist(),
                           "weights": self.radial_weights.tolist(), "n_theta": self.n_theta})

    @classmethod
    def from_json(cls, text: str) -> "DiskGrid":
        doc = json.loads(text)
        return cls(R=float(doc["R"]), r=np.asarray(doc["nodes"]),
                   radial_weights=np.asarray(doc["weights"]), n_theta=int(doc["n_theta"]))


def integrate_radial(f, grid: RadialGrid) -> float:
    """Integrate a radial function over B_R.

    ``f`` is either a callable of r or an array sampled on ``grid.nodes`` (or
    on ``grid.r_eval``; the boundary sample is ignored).
    """
    values = f(grid.nodes) if callable(f) else np.asarray(f, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape[-1] == grid.size + 1:
        values = values[..., :-1]
    bad = ~np.isfinite(values)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise EvaluationError(f"integrand not finite at node {i} (r = {grid.nodes[i]:.6g})")
    return grid.integrate(values)


def integrate_disk(values: np.ndarray, grid: DiskGrid) -> float:
    values = np.asarray(values, dtype=float)
    if values.shape == grid.shape:
        values = values[:-1]
    if values.shape != grid.weights.shape:
        raise GridError(f"field shape {values.shape} does not match grid {grid.shape}")
    return float(np.sum(values * grid.weights))


def _split_parity(coeffs: np.ndarray, grid, op: str, width: int) -> np.ndarray:
    """Apply a radial operator mode by mode; mode k has parity (-1)^k."""
    out = np.empty_like(coeffs)
    k = np.arange(coeffs.shape[1])
    for parity, sel in ((1, k % 2 == 0), (-1, k % 2 == 1)):
        D1, D2 = grid.derivative_matrices(parity, width)
        out[:, sel] = (D1 if op == "d1" else D2) @ coeffs[:, sel]
    return out


def _check_disk_field(u: np.ndarray, grid: DiskGrid) -> np.ndarray:
    if grid.n_r < 4 or grid.n_theta < 4:
        raise GridTooSmallError(f"need at least 4 radial and 4 angular nodes, grid is {grid.shape}")
    u = np.asarray(u, dtype=float)
    if u.shape != grid.shape:
        raise GridError(f"field shape {u.shape} does not match grid {grid.shape}")
    return u


def gradient_disk(u, grid: DiskGrid, width: int = DEFAULT_STENCIL) -> np.ndarray:
    """Polar gradient ``(d_r u, r^-1 d_theta u)`` at every evaluation node.

    Angular derivatives are spectral (FFT); radial derivatives use centred
    finite-difference stencils of ``width`` points, continued through the
    origin by the reflection ``u(-r, theta) = u(r, theta + pi)``.
    """
    u = _check_disk_field(getattr(u, "values", u), grid)
    # derivatives ignore constants; removing one sample makes d(const) exactly 0
    u = u - u[0, 0]
    nt = grid.n_theta
    uh = np.fft.rfft(u, axis=1)
    k = np.arange(uh.shape[1])
    dth = 1j * k * uh
    dth[:, -1] = 0.0  # Nyquist mode carries no derivative information
    u_theta = np.fft.irfft(dth, n=nt, axis=1)
    u_r = np.fft.irfft(_split_parity(uh, grid, "d1", width), n=nt, axis=1)
    return np.stack([u_r, u_theta / grid.r_eval[:, None]], axis=-1)


def laplacian_disk(u, grid: DiskGrid, width: int = DEFAULT_STENCIL) -> np.ndarray:
    """Discrete Laplacian ``u_rr + u_r / r + u_thetatheta / r^2`` on the grid."""
    u = _check_disk_field(getattr(u, "values", u), grid)
    nt = grid.n_theta
    uh = np.fft.rfft(u, axis=1)
    k = np.arange(uh.shape[1])
    r = grid.r_eval[:, None]
    lap = _split_parity(uh, grid, "d2", width) + _split_parity(uh, grid, "d1", width) / r
    lap -= (k**2)[None, :] * uh / r**2
    return np.fft.irfft(lap, n=nt, axis=1)


class DirichletPoisson:
    """Mode-by-mode solver for ``-Delta v = f`` on the disk with v = 0 at r = R."""

    def __init__(self, grid: DiskGrid, width: int = DEFAULT_STENCIL):
        from scipy.linalg import lu_factor

        self.grid = grid
        r = grid.r
        n_modes = grid.n_theta // 2 + 1
        self._lu = []
        for k in range(n_modes):
            D1, D2 = grid.derivative_matrices(1 if k % 2 == 0 else -1, width)
            L = D2[:-1, :-1] + D1[:-1, :-1] / r[:, None] - np.diag(k**2 / r**2)
            self._lu.append(lu_factor(-L))

    def solve(self, f: np.ndarray) -> np.ndarray:
        from scipy.linalg import lu_solve

        f = np.asarray(f, dtype=float)
        fh = np.fft.rfft(f[:-1] if f.shape[0] == self.grid.n_r + 1 else f, axis=1)
        vh = np.zeros((self.grid.n_r + 1, fh.shape[1]), dtype=complex)
        for k, lu in enumerate(self._lu):
            vh[:-1, k] = lu_solve(lu, fh[:, k])
        return np.fft.irfft(vh, n=self.grid.n_theta, axis=1)


def radial_derivative(values: np.ndarray, grid: RadialGrid, parity: int = 1,
                      width: int = DEFAULT_STENCIL) -> np.ndarray:
    """d/dr of a radial profile sampled on ``grid.r_eval``.

    ``parity=1`` for profiles even through the origin (smooth radial fields),
    ``-1`` for odd ones such as a radial map T(r).
    """
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != grid.size + 1:
        raise GridError(f"expected {grid.size + 1} samples, got {values.shape[-1]}")
    if grid.size < 4:
        raise GridTooSmallError("need at least 4 radial nodes")
    D1, _ = grid.derivative_matrices(parity, width)
    if parity == 1:
        values = values - values[..., :1]
    return values @ D1.T


def _normalized_legendre(lmax: int, x: np.ndarray) -> np.ndarray:
    """P[l, m, j]: associated Legendre functions with int_{-1}^{1} P^2 dx / 2 = 1.

    Built with the standard fully normalised three-term recurrence, which
    stays finite for high degree where factorial normalisations overflow.
    """
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    out = np.zeros((lmax + 1, lmax + 1, len(x)))
    diag = np.ones_like(x)
    for m in range(lmax + 1):
        if m > 0:
            diag = diag * s * math.sqrt((2 * m + 1) / (2 * m) if m > 1 else 1.5)
        out[m, m] = diag
        if m + 1 <= lmax:
            out[m + 1, m] = math.sqrt(2 * m + 3) * x * diag
        for l in range(m + 2, lmax + 1):
            a = math.sqrt((4 * l * l - 1) / (l * l - m * m))
            b = math.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
            out[l, m] = a * (x * out[l - 1, m] - b * out[l - 2, m])
    return out


@dataclass(frozen=True)
class SphereGrid:
    """Gauss-Legendre (in cos colatitude) x trapezoid (in longitude) grid on S^2.

    Weights are normalized to total measure one.
    """

    x: np.ndarray = field(repr=False)
    lat_weights: np.ndarray = field(repr=False)
    n_lon: int = 64

    @classmethod
    def build(cls, n_lat: int = 32) -> "SphereGrid":
        x, w = np.polynomial.legendre.leggauss(n_lat)
        return cls(x=x, lat_weights=w / 2.0, n_lon=2 * n_lat)

    @property
    def n_lat(self) -> int:
        return len(self.x)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_lat, self.n_lon)

    @cached_property
    def lon(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_lon) / self.n_lon

    @cached_property
    def weights(self) -> np.ndarray:
        return np.outer(self.lat_weights, np.full(self.n_lon, 1.0 / self.n_lon))

    @cached_property
    def xyz(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        z = np.repeat(self.x[:, None], self.n_lon, axis=1)
        s = np.sqrt(1.0 - z**2)
        return s * np.cos(self.lon), s * np.sin(self.lon), z

    @property
    def lmax(self) -> int:
        return self.n_lat - 1

    @cached_property
    def legendre(self) -> np.ndarray:
        return _normalized_legendre(self.lmax, self.x)

    def sample(self, f) -> np.ndarray:
        return np.broadcast_to(np.asarray(f(*self.xyz), dtype=float), self.shape).copy()

    def integrate(self, values: np.ndarray) -> float:
        values = np.asarray(values, dtype=float)
        if values.shape != self.shape:
            raise GridError(f"field shape {values.shape} does not match sphere grid {self.shape}")
        return float(np.sum(values * self.weights))

    def harmonic_power(self, values: np.ndarray) -> np.ndarray:
        """Per-degree power ``sum_m |a_lm|^2`` in the orthonormal basis of L^2(d omega)."""
        values = np.asarray(values, dtype=float)
        c = np.fft.rfft(values, axis=1) / self.n_lon
        lmax = self.lmax
        power = np.zeros(lmax + 1)
        for m in range(min(lmax, self.n_lon // 2 - 1) + 1):
            a = (self.legendre[m:, m] * self.lat_weights) @ c[:, m]
            power[m:] += (1.0 if m == 0 else 2.0) * np.abs(a) ** 2
        return power

    def dirichlet(self, values: np.ndarray) -> float:
        """``int |grad u|^2 d omega`` computed spectrally."""
        power = self.harmonic_power(values)
        l = np.arange(len(power))
        return float(np.sum(l * (l + 1) * power))

    def harmonic(self, l: int, m: int, kind: str = "cos") -> np.ndarray:
        """Real orthonormal spherical harmonic of degree l, order m >= 0 on the grid."""
        p = self.legendre[l, abs(m)][:, None]
        if m == 0:
            return np.repeat(p, self.n_lon, axis=1)
        trig = np.cos if kind == "cos" else np.sin
        return np.sqrt(2.0) * p * trig(m * self.lon)[None, :]
