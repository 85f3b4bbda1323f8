"""Uniform grids, complex fields on them, and state factories.

Natural units hbar = m = 1 throughout.  Two boundary kinds are supported:

``periodic``
    nodes ``origin + k*dx`` for ``k = 0..n-1`` on a ring of length ``n*dx``.
``hard-wall``
    the same nodes are the *interior* points of a box whose walls sit one
    cell outside the first and last node, where the field is pinned to zero.
    The trapezoid rule over the box then collapses to the plain sum over
    nodes, so both kinds share one quadrature weight ``dx``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Literal

import numpy as np

from .errors import (
    GridMismatch,
    NonPeriodicGrid,
    TimeMismatch,
    UnresolvedWidth,
)

Boundary = Literal["periodic", "hard-wall"]
TIME_TOL = 1e-12


@dataclass(frozen=True)
class SpatialGrid:
    n_points: int
    dx: float
    origin: float = 0.0
    boundary: Boundary = "periodic"

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 8:
            raise ValueError(f"n_points must be an integer >= 8, got {self.n_points}")
        if not (self.dx > 0 and math.isfinite(self.dx)):
            raise ValueError(f"dx must be positive, got {self.dx}")
        if self.boundary not in ("periodic", "hard-wall"):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        object.__setattr__(self, "n_points", int(self.n_points))
        object.__setattr__(self, "dx", float(self.dx))
        object.__setattr__(self, "origin", float(self.origin))

    @classmethod
    def from_interval(cls, x_min: float, x_max: float, n_points: int,
                      boundary: Boundary = "periodic") -> "SpatialGrid":
        """Grid covering ``[x_min, x_max)`` (periodic) or the open box ``(x_min, x_max)`` (hard-wall)."""
        if boundary == "periodic":
            dx = (x_max - x_min) / n_points
            return cls(n_points, dx, x_min, boundary)
        dx = (x_max - x_min) / (n_points + 1)
        return cls(n_points, dx, x_min + dx, boundary)

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def length(self) -> float:
        return self.n_points * self.dx if self.periodic else (self.n_points + 1) * self.dx

    @cached_property
    def x(self) -> np.ndarray:
        x = self.origin + self.dx * np.arange(self.n_points)
        x.flags.writeable = False
        return x

    def coordinate(self, k: int) -> float:
        return self.origin + k * self.dx

    def to_json(self) -> dict:
        return {"n_points": self.n_points, "dx": self.dx, "origin": self.origin,
                "boundary": self.boundary}

    @classmethod
    def from_json(cls, data: dict) -> "SpatialGrid":
        if "dx" in data:
            return cls(int(data["n_points"]), float(data["dx"]), float(data.get("origin", 0.0)),
                       data.get("boundary", "periodic"))
        return cls.from_interval(float(data["x_min"]), float(data["x_max"]), int(data["n_points"]),
                                 data.get("boundary", "periodic"))


def _frozen(values, dtype=complex) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class WaveField:
    """Complex amplitudes on a grid at one time.  Immutable."""

    grid: SpatialGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.shape != (self.grid.n_points,):
            raise GridMismatch(f"values shape {vals.shape} does not match grid n_points={self.grid.n_points}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("WaveField values must be finite")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "time", float(self.time))

    def norm_squared(self) -> float:
        return float(np.vdot(self.values, self.values).real * self.grid.dx)

    def norm(self) -> float:
        return math.sqrt(self.norm_squared())

    def normalized(self) -> "WaveField":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize a zero field")
        return WaveField(self.grid, self.values / n, self.time)

    def replace(self, values=None, time=None) -> "WaveField":
        return WaveField(self.grid, self.values if values is None else values,
                         self.time if time is None else time)

    def __add__(self, other: "WaveField") -> "WaveField":
        check_compatible(self, other)
        return self.replace(self.values + other.values)

    def __mul__(self, scalar) -> "WaveField":
        return self.replace(self.values * scalar)

    __rmul__ = __mul__


def check_compatible(a, b, *, check_time: bool = True) -> None:
    if a.grid != b.grid:
        raise GridMismatch(f"{a.grid} != {b.grid}")
    if check_time and abs(a.time - b.time) > TIME_TOL:
        raise TimeMismatch(f"time tags differ: {a.time!r} vs {b.time!r}")


def inner_product(bra: WaveField, ket: WaveField) -> complex:
    """<bra|ket> = sum conj(bra) * ket * dx."""
    check_compatible(bra, ket)
    return complex(np.vdot(bra.values, ket.values) * bra.grid.dx)


def make_gaussian(grid: SpatialGrid, center: float, width: float, wavenumber: float = 0.0,
                  time: float = 0.0) -> WaveField:
    """Normalized ``exp(i k x) exp(-(x - c)^2 / (2 width^2))``.

    On periodic grids the envelope uses the minimum-image distance so that a
    packet near the seam stays smooth.  Normalization is done on the grid,
    so the discrete norm is 1 to rounding.
    """
    if width <= 2 * grid.dx:
        raise UnresolvedWidth(f"width {width} <= 2*dx = {2 * grid.dx}")
    x = grid.x
    d = x - center
    if grid.periodic:
        d = (d + grid.length / 2) % grid.length - grid.length / 2
    envelope = np.exp(-d * d / (2.0 * width * width))
    psi = envelope * np.exp(1j * wavenumber * (center + d))
    if not grid.periodic:
        # walls sit one cell outside the end nodes
        tail = max(math.exp(-((x[0] - grid.dx - center) ** 2) / (2 * width**2)),
                   math.exp(-((x[-1] + grid.dx - center) ** 2) / (2 * width**2)))
        if tail > 1e-10:
            warnings.warn(f"Gaussian tail {tail:.2e} at hard wall exceeds 1e-10", stacklevel=2)
    return WaveField(grid, psi, time).normalized()


def make_narrow_peak(grid: SpatialGrid, center: float, wavenumber: float = 0.0,
                     time: float = 0.0) -> WaveField:
    """Resolvable stand-in for a position eigenstate: a Gaussian of width 3*dx."""
    return make_gaussian(grid, center, 3.0 * grid.dx, wavenumber, time)


def mode_wavenumber(grid: SpatialGrid, mode_index: int) -> float:
    return 2.0 * math.pi * mode_index / (grid.n_points * grid.dx)


def make_plane_wave(grid: SpatialGrid, mode_index: int, time: float = 0.0) -> WaveField:
    if not grid.periodic:
        raise NonPeriodicGrid("plane waves need a periodic grid")
    if abs(mode_index) >= grid.n_points / 2:
        raise ValueError(f"|mode_index| must be < n_points/2, got {mode_index}")
    k = mode_wavenumber(grid, mode_index)
    phase = np.exp(1j * k * (grid.x - grid.origin))
    return WaveField(grid, phase / math.sqrt(grid.length), time)


def random_field(grid: SpatialGrid, rng: np.random.Generator, time: float = 0.0,
                 smooth: int | None = None) -> WaveField:
    """Normalized random complex field.

    ``smooth`` keeps only the lowest ``smooth`` Fourier modes (useful when a
    test needs a band-limited field).
    """
    vals = rng.standard_normal(grid.n_points) + 1j * rng.standard_normal(grid.n_points)
    if smooth is not None:
        spec = np.fft.fft(vals)
        freqs = np.abs(np.fft.fftfreq(grid.n_points) * grid.n_points)
        spec[freqs > smooth] = 0.0
        vals = np.fft.ifft(spec)
        if not grid.periodic:
            vals = vals * np.sin(np.pi * (np.arange(grid.n_points) + 1) / (grid.n_points + 1))
    return WaveField(grid, vals, time).normalized()


def apply_mask(field: WaveField, mask) -> WaveField:
    """Pointwise aperture; not renormalized."""
    mask = np.asarray(mask, dtype=float)
    if mask.shape != (field.grid.n_points,):
        raise GridMismatch(f"mask length {mask.shape} != n_points {field.grid.n_points}")
    if np.any(mask < 0) or np.any(mask > 1):
        raise ValueError("mask values must lie in [0, 1]")
    return field.replace(field.values * mask)


def slit_mask(grid: SpatialGrid, centers, width_cells: int) -> np.ndarray:
    """0/1 mask open on ``width_cells`` nodes around each center."""
    mask = np.zeros(grid.n_points)
    for c in np.atleast_1d(centers):
        k0 = int(round((c - grid.origin) / grid.dx)) - width_cells // 2
        idx = np.arange(k0, k0 + width_cells)
        if grid.periodic:
            idx %= grid.n_points
        else:
            idx = idx[(idx >= 0) & (idx < grid.n_points)]
        mask[idx] = 1.0
    return mask


# ---------------------------------------------------------------------------
# Difference operators.  All act along axis 0 so that they broadcast over the
# spectator coordinates of many-body arrays.

def _pad_shape(arr: np.ndarray) -> tuple:
    return (1,) + arr.shape[1:]


def spectral_derivative(values: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    if not grid.periodic:
        raise NonPeriodicGrid("spectral derivative needs a periodic grid")
    n = grid.n_points
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=grid.dx)
    if n % 2 == 0:
        k[n // 2] = 0.0
    k = k.reshape((n,) + (1,) * (values.ndim - 1))
    return np.fft.ifft(1j * k * np.fft.fft(values, axis=0), axis=0)


def central_derivative(values: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    if grid.periodic:
        return (np.roll(values, -1, axis=0) - np.roll(values, 1, axis=0)) / (2.0 * grid.dx)
    z = np.zeros(_pad_shape(values), dtype=values.dtype)
    padded = np.concatenate([z, values, z], axis=0)
    return (padded[2:] - padded[:-2]) / (2.0 * grid.dx)


def derivative(values: np.ndarray, grid: SpatialGrid, scheme: str = "auto") -> np.ndarray:
    """First derivative along axis 0.

    ``auto`` picks the spectral derivative on periodic grids (plane waves are
    exact eigenvectors with eigenvalue ``i k``) and the centered difference
    on hard-wall grids.
    """
    if scheme == "auto":
        scheme = "spectral" if grid.periodic else "central"
    if scheme == "spectral":
        return spectral_derivative(values, grid)
    if scheme == "central":
        return central_derivative(values, grid)
    raise ValueError(f"unknown derivative scheme {scheme!r}")


def forward_edges(values: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Forward differences on cell edges.

    Periodic: ``n`` edges, edge ``k`` joins nodes ``k`` and ``k+1 (mod n)``.
    Hard-wall: ``n+1`` edges, edge ``j`` joins node ``j-1`` and ``j`` with the
    walls supplying zeros at ``j = 0`` and ``j = n``.
    """
    if grid.periodic:
        return (np.roll(values, -1, axis=0) - values) / grid.dx
    z = np.zeros(_pad_shape(values), dtype=values.dtype)
    padded = np.concatenate([z, values, z], axis=0)
    return np.diff(padded, axis=0) / grid.dx


def edges_to_nodes(edge_values: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Share edge quantities between neighbouring nodes, preserving the sum."""
    if grid.periodic:
        return 0.5 * (np.roll(edge_values, 1, axis=0) + edge_values)
    nodes = 0.5 * (edge_values[:-1] + edge_values[1:])
    nodes[0] = nodes[0] + 0.5 * edge_values[0]
    nodes[-1] = nodes[-1] + 0.5 * edge_values[-1]
    return nodes


def second_difference_matrix(grid: SpatialGrid) -> np.ndarray:
    """Dense centered second difference D2 respecting the grid boundary."""
    n = grid.n_points
    d2 = (np.diag(np.full(n, -2.0)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1))
    if grid.periodic:
        d2[0, -1] = d2[-1, 0] = 1.0
    return d2 / grid.dx**2


def derivative_matrix(grid: SpatialGrid, scheme: str = "auto") -> np.ndarray:
    """Dense matrix of :func:`derivative` (built by applying it to the identity)."""
    return derivative(np.eye(grid.n_points, dtype=complex), grid, scheme)


@dataclass(frozen=True, eq=False)
class ManyBodyField:
    """Amplitudes on the n-fold product grid, ``values.ndim == n`` (n = 2 or 3)."""

    grid: SpatialGrid
    values: np.ndarray
    time: float = 0.0
    symmetry: Literal["none", "symmetric", "antisymmetric"] = "none"

    def __post_init__(self):
        vals = _frozen(self.values)
        n = self.grid.n_points
        if vals.ndim not in (2, 3) or any(s != n for s in vals.shape):
            raise GridMismatch(f"values shape {vals.shape} incompatible with n_points={n}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        if self.symmetry not in ("none", "symmetric", "antisymmetric"):
            raise ValueError(f"unknown symmetry {self.symmetry!r}")
        if self.symmetry != "none":
            sign = 1.0 if self.symmetry == "symmetric" else -1.0
            scale = max(1.0, float(np.max(np.abs(vals))))
            for a in range(vals.ndim - 1):
                perm = list(range(vals.ndim))
                perm[a], perm[a + 1] = perm[a + 1], perm[a]
                if np.max(np.abs(vals - sign * vals.transpose(perm)), initial=0.0) > 1e-12 * scale:
                    raise ValueError(f"values are not {self.symmetry} under exchange")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "time", float(self.time))

    @property
    def n_particles(self) -> int:
        return self.values.ndim

    def norm_squared(self) -> float:
        return float(np.vdot(self.values, self.values).real * self.grid.dx**self.n_particles)

    def replace(self, values=None, time=None) -> "ManyBodyField":
        return ManyBodyField(self.grid, self.values if values is None else values,
                             self.time if time is None else time, self.symmetry)


class TwoParticleField(ManyBodyField):
    """Two-particle amplitudes ``psi(x1, x2)`` on an n x n array."""

    def __post_init__(self):
        super().__post_init__()
        if self.values.ndim != 2:
            raise GridMismatch("TwoParticleField needs a 2-D array")

    def replace(self, values=None, time=None) -> "TwoParticleField":
        return TwoParticleField(self.grid, self.values if values is None else values,
                                self.time if time is None else time, self.symmetry)


def many_body_inner_product(bra: ManyBodyField, ket: ManyBodyField) -> complex:
    check_compatible(bra, ket)
    if bra.values.ndim != ket.values.ndim:
        raise GridMismatch("particle numbers differ")
    return complex(np.vdot(bra.values, ket.values) * bra.grid.dx**bra.values.ndim)
