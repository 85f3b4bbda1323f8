"""Two- and three-particle densities on the single-particle grid.

Inputs live on the n-fold product grid; every density returned here is a
function of one coordinate.  Distinguishable particles get one density per
particle (the other coordinates integrated out); identical particles only
get the overall density, ``n/A`` times the marginal over the remaining
n - 1 coordinates.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .densities import (
    AMPLITUDE_FLOOR_REL,
    DensityField,
    ObservableSpec,
    density_numerator,
)
from .errors import AmplitudeNearZero, GridMismatch, SymmetryModeMismatch
from .evolution import PotentialSpec, build_step, count_steps, hamiltonian_matrix
from .fields import (
    ManyBodyField,
    SpatialGrid,
    TwoParticleField,
    WaveField,
    check_compatible,
    many_body_inner_product,
)


@dataclass(frozen=True, eq=False)
class TwoParticleDensityInput:
    psi_i2: ManyBodyField
    psi_f2: ManyBodyField
    observable: ObservableSpec
    observable_2: ObservableSpec | None = None  # particle 2, when it differs

    def __post_init__(self):
        check_compatible(self.psi_f2, self.psi_i2)
        if self.psi_f2.values.ndim != self.psi_i2.values.ndim:
            raise GridMismatch("initial and final fields have different particle numbers")

    @property
    def n_particles(self) -> int:
        return self.psi_i2.values.ndim

    def amplitude(self) -> complex:
        a = many_body_inner_product(self.psi_f2, self.psi_i2)
        floor = AMPLITUDE_FLOOR_REL * math.sqrt(self.psi_f2.norm_squared() * self.psi_i2.norm_squared())
        if not abs(a) > floor:
            raise AmplitudeNearZero(a, floor)
        return a


def _marginal(obs: ObservableSpec, f: np.ndarray, g: np.ndarray, axis: int, grid) -> np.ndarray:
    f0 = np.moveaxis(f, axis, 0)
    g0 = np.moveaxis(g, axis, 0)
    num = density_numerator(obs, f0, g0, grid)
    rest = tuple(range(1, num.ndim))
    return num.sum(axis=rest) * grid.dx ** len(rest)


def density_particle(which: int, inp: TwoParticleDensityInput) -> DensityField:
    """Density carried by particle ``which`` (1-based) of a distinguishable system."""
    if inp.psi_i2.symmetry != "none" or inp.psi_f2.symmetry != "none":
        raise SymmetryModeMismatch("per-particle densities need distinguishable (symmetry 'none') fields")
    if not 1 <= which <= inp.n_particles:
        raise ValueError(f"particle index {which} out of range")
    obs = inp.observable if which == 1 or inp.observable_2 is None else inp.observable_2
    a = inp.amplitude()
    grid = inp.psi_i2.grid
    num = _marginal(obs, inp.psi_f2.values, inp.psi_i2.values, which - 1, grid)
    return DensityField(grid, num / a, obs, inp.psi_i2.time, a)


def density_total_distinguishable(inp: TwoParticleDensityInput) -> DensityField:
    parts = [density_particle(k, inp) for k in range(1, inp.n_particles + 1)]
    values = parts[0].values
    for p in parts[1:]:
        values = values + p.values
    return DensityField(parts[0].grid, values, inp.observable, parts[0].time, parts[0].amplitude_used)


def density_identical(inp: TwoParticleDensityInput) -> DensityField:
    sym = inp.psi_i2.symmetry
    if sym == "none" or inp.psi_f2.symmetry != sym:
        raise SymmetryModeMismatch(
            f"identical-particle density needs matching (anti)symmetric fields, got "
            f"{inp.psi_i2.symmetry!r} / {inp.psi_f2.symmetry!r}")
    a = inp.amplitude()
    grid = inp.psi_i2.grid
    num = _marginal(inp.observable, inp.psi_f2.values, inp.psi_i2.values, 0, grid)
    return DensityField(grid, inp.n_particles * num / a, inp.observable, inp.psi_i2.time, a)


def _permutation_sign(perm) -> int:
    sign = 1
    perm = list(perm)
    for i in range(len(perm)):
        while perm[i] != i:
            j = perm[i]
            perm[i], perm[j] = perm[j], perm[i]
            sign = -sign
    return sign


def _outer(arrays) -> np.ndarray:
    out = arrays[0]
    for a in arrays[1:]:
        out = np.multiply.outer(out, a)
    return out


def product_state(*states: WaveField) -> ManyBodyField:
    """Distinguishable product ``a(x1) b(x2) [c(x3)]``."""
    for s in states[1:]:
        check_compatible(states[0], s)
    cls = TwoParticleField if len(states) == 2 else ManyBodyField
    return cls(states[0].grid, _outer([s.values for s in states]), states[0].time, "none")


def antisymmetrize(*states: WaveField, symmetric: bool = False) -> ManyBodyField:
    """(Anti)symmetrized product, ``(1/sqrt(n!)) sum_P (+-1)^P prod_k s_P(k)(x_k)``.

    For two states this is ``[a(x)b(x') - a(x')b(x)]/sqrt(2)``.
    """
    if len(states) not in (2, 3):
        raise ValueError("2 or 3 single-particle states are supported")
    for s in states[1:]:
        check_compatible(states[0], s)
    n = len(states)
    # permute axes of one outer product so exchange symmetry holds bit-exactly for pairs
    base = _outer([s.values for s in states])
    if n == 2:
        total = base + base.T if symmetric else base - base.T
    else:
        total = 0
        for perm in itertools.permutations(range(n)):
            sign = 1 if symmetric else _permutation_sign(perm)
            total = total + sign * base.transpose(np.argsort(perm))
    values = total / math.sqrt(math.factorial(n))
    cls = TwoParticleField if n == 2 else ManyBodyField
    return cls(states[0].grid, values, states[0].time, "symmetric" if symmetric else "antisymmetric")


# ---------------------------------------------------------------------------
# Evolution on the product grid

def _apply_each_axis(values: np.ndarray, mat: np.ndarray) -> np.ndarray:
    out = values
    for ax in range(values.ndim):
        out = np.moveaxis(np.tensordot(mat, out, axes=(1, ax)), 0, ax)
    return out


def evolve_many_body(field: ManyBodyField, potential: PotentialSpec, t_target: float, dt: float,
                     interaction: np.ndarray | None = None) -> ManyBodyField:
    """Evolve on the product grid.

    Without ``interaction`` each step applies the single-particle
    Crank-Nicolson matrix along every axis (Kronecker product of identical
    factors).  An interaction ``V(x1, x2)`` is supported for two particles on
    at most 64 points, with Crank-Nicolson in the full tensor space.
    """
    grid = field.grid
    n = count_steps(field.time, t_target, dt)
    sign = 1 if n >= 0 else -1
    values = field.values
    if interaction is None:
        for j in range(abs(n)):
            t = field.time + sign * j * dt
            seg = potential.segment_for_step(t, sign * dt)
            op = build_step(grid, seg.values, dt)
            values = _apply_each_axis(values, op.forward_matrix if sign > 0 else op.backward_matrix)
        return field.replace(values, field.time + n * dt)
    if values.ndim != 2 or grid.n_points > 64:
        raise ValueError("interacting evolution supports two particles on <= 64 points")
    interaction = np.asarray(interaction, dtype=float)
    if interaction.shape != values.shape:
        raise GridMismatch("interaction must be n_points x n_points")
    npts = grid.n_points
    flat = values.reshape(-1)
    cache = {}
    for j in range(abs(n)):
        t = field.time + sign * j * dt
        seg = potential.segment_for_step(t, sign * dt)
        key = id(seg)
        if key not in cache:
            h1 = scipy.sparse.csr_matrix(hamiltonian_matrix(grid, seg.values))
            eye = scipy.sparse.identity(npts, format="csr")
            h = scipy.sparse.kron(h1, eye) + scipy.sparse.kron(eye, h1) + scipy.sparse.diags(interaction.reshape(-1))
            big_eye = scipy.sparse.identity(npts * npts, format="csc")
            s = sign * dt
            cache[key] = (scipy.sparse.linalg.splu((big_eye + 0.5j * s * h).tocsc()),
                          (big_eye - 0.5j * s * h).tocsr())
        lu, rhs = cache[key]
        flat = lu.solve(rhs @ flat)
    return field.replace(flat.reshape(values.shape), field.time + n * dt)


def save_many_body(field: ManyBodyField, path_stem) -> tuple:
    """Write ``<stem>.bin`` (row-major complex128) plus a ``<stem>.json`` sidecar."""
    stem = Path(path_stem)
    bin_path, json_path = stem.with_suffix(".bin"), stem.with_suffix(".json")
    np.ascontiguousarray(field.values, dtype=np.complex128).tofile(bin_path)
    meta = {"n_points": field.grid.n_points, "dx": field.grid.dx, "symmetry": field.symmetry,
            "time": field.time, "n_particles": field.n_particles, "origin": field.grid.origin,
            "boundary": field.grid.boundary}
    json_path.write_text(json.dumps(meta, indent=2))
    return bin_path, json_path


def load_many_body(path_stem) -> ManyBodyField:
    stem = Path(path_stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    grid = SpatialGrid.from_json(meta)
    n, k = grid.n_points, int(meta.get("n_particles", 2))
    values = np.fromfile(stem.with_suffix(".bin"), dtype=np.complex128).reshape((n,) * k)
    cls = TwoParticleField if k == 2 else ManyBodyField
    return cls(grid, values, float(meta["time"]), meta["symmetry"])
