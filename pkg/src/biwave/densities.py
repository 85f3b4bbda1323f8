"""Bilinear density fields built from an initial and a final wavefunction.

For an observable Q the density is ``Q(x) = conj(psi_f) Q psi_i / A`` with
``A = <psi_f|psi_i>``.  Discretization conventions:

* momentum uses the symmetrized form ``(1/2i)[f* Dg - (Df*) g]`` with ``D``
  the spectral derivative on periodic grids and the centered difference on
  hard-wall grids; ``momentum_form="right"`` gives ``(1/i) f* Dg``.
* energy uses the gradient-product reading ``(1/2m) (D+f)* (D+g) + V f* g``
  with forward differences on cell edges shared back onto nodes.  Summation
  by parts then makes the total exactly ``<f|H|g>/A`` for the same ``H``
  that the Crank-Nicolson stepper uses.
* current is ``(e/m)`` times the momentum density.

Every kernel acts along axis 0 and broadcasts over trailing axes, which is
how :mod:`biwave.multibody` reuses them on product grids.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import AmplitudeNearZero, GridMismatch, NotAnEigenvector
from .fields import (
    SpatialGrid,
    WaveField,
    check_compatible,
    derivative,
    derivative_matrix,
    edges_to_nodes,
    forward_edges,
    inner_product,
    second_difference_matrix,
)

AMPLITUDE_FLOOR_REL = 1e-10
Kind = Literal["mass", "charge", "momentum", "energy", "current", "custom"]


@dataclass(frozen=True, eq=False)
class ObservableSpec:
    kind: Kind
    m: float = 1.0
    e: float = 1.0
    matrix: np.ndarray | None = None
    potential: np.ndarray | None = None
    momentum_form: Literal["symmetric", "right"] = "symmetric"
    derivative_scheme: str = "auto"

    def __post_init__(self):
        if self.kind not in ("mass", "charge", "momentum", "energy", "current", "custom"):
            raise ValueError(f"unknown observable kind {self.kind!r}")
        if self.kind in ("mass", "energy", "current") and not self.m > 0:
            raise ValueError("mass must be positive")
        if self.kind == "custom":
            if self.matrix is None:
                raise ValueError("custom observables need a matrix")
            mat = np.array(self.matrix, dtype=complex, copy=True)
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or not np.all(np.isfinite(mat)):
                raise ValueError("custom matrix must be square and finite")
            mat.flags.writeable = False
            object.__setattr__(self, "matrix", mat)
        if self.potential is not None:
            v = np.array(self.potential, dtype=float, copy=True)
            v.flags.writeable = False
            object.__setattr__(self, "potential", v)

    @classmethod
    def mass(cls, m: float = 1.0) -> "ObservableSpec":
        return cls("mass", m=m)

    @classmethod
    def charge(cls, e: float = 1.0) -> "ObservableSpec":
        return cls("charge", e=e)

    @classmethod
    def momentum(cls, form: str = "symmetric", scheme: str = "auto") -> "ObservableSpec":
        return cls("momentum", momentum_form=form, derivative_scheme=scheme)

    @classmethod
    def energy(cls, potential=None, m: float = 1.0) -> "ObservableSpec":
        return cls("energy", m=m, potential=potential)

    @classmethod
    def current(cls, e: float = 1.0, m: float = 1.0, scheme: str = "auto") -> "ObservableSpec":
        return cls("current", e=e, m=m, derivative_scheme=scheme)

    @classmethod
    def custom(cls, matrix) -> "ObservableSpec":
        return cls("custom", matrix=matrix)

    @property
    def label(self) -> str:
        return self.kind

    def operator_matrix(self, grid: SpatialGrid) -> np.ndarray:
        """Dense matrix M with ``total(density) == <f|M|g>/A`` on this grid."""
        n = grid.n_points
        if self.kind == "mass":
            return self.m * np.eye(n, dtype=complex)
        if self.kind == "charge":
            return self.e * np.eye(n, dtype=complex)
        if self.kind in ("momentum", "current"):
            p = -1j * derivative_matrix(grid, self.derivative_scheme)
            return p if self.kind == "momentum" else (self.e / self.m) * p
        if self.kind == "energy":
            h = -second_difference_matrix(grid) / (2.0 * self.m)
            if self.potential is not None:
                h = h + np.diag(self.potential)
            return h.astype(complex)
        return np.asarray(self.matrix)


@dataclass(frozen=True, eq=False)
class DensityField:
    grid: SpatialGrid
    values: np.ndarray
    quantity: ObservableSpec
    time: float
    amplitude_used: complex

    def __post_init__(self):
        v = np.array(self.values, dtype=complex, copy=True)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def total(self) -> complex:
        return total(self)

    @property
    def real(self) -> np.ndarray:
        return self.values.real


def amplitude_floor(psi_f_norm: float, psi_i_norm: float) -> float:
    return AMPLITUDE_FLOOR_REL * psi_f_norm * psi_i_norm


def amplitude(psi_f: WaveField, psi_i: WaveField) -> complex:
    """A = <psi_f|psi_i>."""
    return inner_product(psi_f, psi_i)


def check_amplitude(a: complex, norm_f: float, norm_i: float) -> None:
    floor = amplitude_floor(norm_f, norm_i)
    if not abs(a) > floor:
        raise AmplitudeNearZero(a, floor)


# ---------------------------------------------------------------------------
# Kernels: un-normalized numerators, axis 0 is the retained coordinate.

def _broadcast(v: np.ndarray, like: np.ndarray) -> np.ndarray:
    return v.reshape((-1,) + (1,) * (like.ndim - 1))


def density_numerator(obs: ObservableSpec, f: np.ndarray, g: np.ndarray,
                      grid: SpatialGrid) -> np.ndarray:
    """``conj(f) Q g`` pointwise (before division by A)."""
    fc = np.conj(f)
    kind = obs.kind
    if kind == "mass":
        return obs.m * fc * g
    if kind == "charge":
        return obs.e * fc * g
    if kind in ("momentum", "current"):
        dg = derivative(g, grid, obs.derivative_scheme)
        if obs.momentum_form == "right":
            p = -1j * fc * dg
        else:
            dfc = np.conj(derivative(f, grid, obs.derivative_scheme))
            p = -0.5j * (fc * dg - dfc * g)
        return p if kind == "momentum" else (obs.e / obs.m) * p
    if kind == "energy":
        edge = np.conj(forward_edges(f, grid)) * forward_edges(g, grid)
        out = edges_to_nodes(edge, grid) / (2.0 * obs.m)
        if obs.potential is not None:
            out = out + _broadcast(obs.potential, f) * fc * g
        return out
    m = obs.matrix
    if m.shape[0] != grid.n_points:
        raise GridMismatch("custom matrix size does not match grid")
    return fc * np.tensordot(m, g, axes=(1, 0))


def density(obs: ObservableSpec, psi_f: WaveField, psi_i: WaveField) -> DensityField:
    """Density of ``obs`` for the boundary pair (psi_f, psi_i) at their common time."""
    check_compatible(psi_f, psi_i)
    a = amplitude(psi_f, psi_i)
    check_amplitude(a, psi_f.norm(), psi_i.norm())
    num = density_numerator(obs, psi_f.values, psi_i.values, psi_f.grid)
    return DensityField(psi_f.grid, num / a, obs, psi_i.time, a)


def density_from_arrays(obs: ObservableSpec, f: np.ndarray, g: np.ndarray, grid: SpatialGrid,
                        a: complex, time: float) -> DensityField:
    """Density from raw arrays and a precomputed amplitude (propagator route)."""
    floor = amplitude_floor(np.linalg.norm(f) * np.sqrt(grid.dx), np.linalg.norm(g) * np.sqrt(grid.dx))
    if not abs(a) > floor:
        raise AmplitudeNearZero(a, floor)
    return DensityField(grid, density_numerator(obs, f, g, grid) / a, obs, time, a)


def total(d: DensityField) -> complex:
    return complex(np.sum(d.values) * d.grid.dx)


@dataclass(frozen=True)
class EigenReport:
    total: complex
    eigenvalue: complex
    abs_error: float
    amplitude: complex
    tolerance: float = 1e-8

    @property
    def passed(self) -> bool:
        return self.abs_error < self.tolerance


def eigen_consistency_check(obs: ObservableSpec, eigen_side: Literal["initial", "final"],
                            eigenfield: WaveField, other: WaveField,
                            eigen_tol: float = 1e-10) -> EigenReport:
    """Total of the density when one boundary state is an eigenvector of ``obs``.

    With the eigenvector on the initial side the total equals its eigenvalue
    whatever the final state; with it on the final side (retrodiction) the
    same holds for any initial state, provided the operator is Hermitian so
    that the eigenvalue is real.
    """
    m = obs.operator_matrix(eigenfield.grid)
    e = eigenfield.values
    me = m @ e
    lam = complex(np.vdot(e, me) / np.vdot(e, e))
    scale = max(1.0, float(np.linalg.norm(m, 1)))
    resid = float(np.linalg.norm(me - lam * e) / np.linalg.norm(e))
    if resid > eigen_tol * scale:
        raise NotAnEigenvector(f"||M e - lambda e|| / ||e|| = {resid:.3e}")
    if eigen_side == "initial":
        d = density(obs, other, eigenfield)
    elif eigen_side == "final":
        d = density(obs, eigenfield, other)
    else:
        raise ValueError(f"eigen_side must be 'initial' or 'final', got {eigen_side!r}")
    tot = total(d)
    return EigenReport(tot, lam, abs(tot - lam), d.amplitude_used)


# ---------------------------------------------------------------------------
# Staggered current used by the continuity check.

def face_current(psi_f: np.ndarray, psi_i: np.ndarray, grid: SpatialGrid, a: complex,
                 e: float = 1.0, m: float = 1.0) -> np.ndarray:
    """Current on cell faces, ``(e/m)(1/2i)[f*_k g_{k+1} - f*_{k+1} g_k]/dx / A``.

    This is the symmetrized momentum density written with forward
    differences; it is the flux for which the semi-discrete continuity
    equation of the 3-point Hamiltonian holds exactly.  Faces follow
    :func:`biwave.fields.forward_edges` (n faces periodic, n+1 hard-wall).
    """
    fc = np.conj(psi_f)
    if grid.periodic:
        flux = fc * np.roll(psi_i, -1) - np.roll(fc, -1) * psi_i
    else:
        z = np.zeros(1, dtype=complex)
        fp = np.concatenate([z, fc, z])
        gp = np.concatenate([z, psi_i, z])
        flux = fp[:-1] * gp[1:] - fp[1:] * gp[:-1]
    return (e / m) * (-0.5j) * flux / grid.dx / a


def face_divergence(faces: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Node divergence (J_{k+1/2} - J_{k-1/2}) / dx of a face field."""
    if grid.periodic:
        return (faces - np.roll(faces, 1)) / grid.dx
    return np.diff(faces) / grid.dx
