"""Discrete retarded/advanced propagators and density extraction by line breaking.

Convention: a :class:`PropagatorMatrix` ``P`` maps grid values directly,
``psi(t) = P @ psi(t')``, so the continuum kernel is ``K ~ P / dx``.  The
delta-function normalization of the continuum propagator equation has no
grid meaning and is not reproduced; every identity is stated for ``P``.

A propagator is stored as its time-ordered list of Crank-Nicolson factors
``(step, count)``.  Composition concatenates the lists (merging equal
neighbours), and the dense matrix is materialized from the list in one
canonical order, so composing ``P(t3,t2) @ P(t2,t1)`` gives the very same
array as ``retarded(t1, t3)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .densities import (
    DensityField,
    ObservableSpec,
    amplitude_floor,
    density,
    density_from_arrays,
    density_numerator,
)
from .errors import AmplitudeNearZero, GridMismatch, TimeOrderViolation
from .evolution import PotentialSpec, count_steps, evolve_interval, step_plan
from .fields import SpatialGrid, WaveField

CONVENTION = "P = K*dx"


def _merge(factors) -> tuple:
    out = []
    for op, count in factors:
        if count == 0:
            continue
        if out and out[-1][0] is op:
            out[-1] = (op, out[-1][1] + count)
        else:
            out.append((op, count))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class PropagatorMatrix:
    """Path-ordered product of step operators between ``t_from`` and ``t_to``.

    ``kind == "retarded"``: ``matrix = U_N ... U_1`` maps ``t_from`` to a
    later ``t_to``.  ``kind == "advanced"``: ``matrix = -(U_N ... U_1)^H``
    maps the later time ``t_from`` back to ``t_to``; it satisfies
    ``conj(K_A) = -transpose(K_R)`` and a final state is carried back by
    ``psi_f(t) = -K_A @ psi_f(t2)``.
    """

    grid: SpatialGrid
    factors: tuple  # time-ordered ((StepOperator, count), ...)
    t_from: float
    t_to: float
    kind: str = "retarded"
    convention: str = CONVENTION

    @cached_property
    def matrix(self) -> np.ndarray:
        n = self.grid.n_points
        m = np.eye(n, dtype=complex)
        if self.kind == "retarded":
            for op, count in self.factors:
                m = np.linalg.matrix_power(op.forward_matrix, count) @ m
        else:
            for op, count in self.factors:
                m = m @ np.linalg.matrix_power(op.backward_matrix, count)
            m = -m
        m.flags.writeable = False
        return m

    @property
    def n_steps(self) -> int:
        return sum(c for _, c in self.factors)

    def __matmul__(self, other: "PropagatorMatrix") -> "PropagatorMatrix":
        """``self @ other``: first ``other`` then ``self`` (retarded only)."""
        if self.kind != "retarded" or other.kind != "retarded":
            return NotImplemented
        if self.grid != other.grid:
            raise GridMismatch("propagators live on different grids")
        if abs(other.t_to - self.t_from) > 1e-12 * max(1.0, abs(self.t_from)):
            raise TimeOrderViolation(f"cannot compose: {other.t_to} != {self.t_from}")
        return PropagatorMatrix(self.grid, _merge(other.factors + self.factors),
                                other.t_from, self.t_to, "retarded")

    def apply(self, field: WaveField) -> WaveField:
        """Apply step by step; bit-identical to :func:`biwave.evolution.evolve_interval`."""
        if field.grid != self.grid:
            raise GridMismatch("field and propagator live on different grids")
        psi = field.values
        if self.kind == "retarded":
            for op, count in self.factors:
                for _ in range(count):
                    psi = op.forward_matrix @ psi
            return WaveField(self.grid, psi, self.t_to)
        for op, count in reversed(self.factors):
            for _ in range(count):
                psi = op.backward_matrix @ psi
        return WaveField(self.grid, psi, self.t_to)

    def unitarity_error(self) -> float:
        m = self.matrix
        return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))))

    def to_json(self) -> dict:
        return {"t_from": self.t_from, "t_to": self.t_to, "n_points": self.grid.n_points,
                "dx": self.grid.dx, "origin": self.grid.origin, "boundary": self.grid.boundary,
                "kind": self.kind, "convention": self.convention}


def _factors(grid, potential, t1, t2, dt, channel=None) -> tuple:
    n = count_steps(t1, t2, dt)
    ops = step_plan(grid, potential, t1, n, dt, channel)
    return _merge((op, 1) for op in ops)


def retarded(grid: SpatialGrid, potential: PotentialSpec, t1: float, t2: float, *,
             dt: float, channel: int | None = None) -> PropagatorMatrix:
    """P(t2, t1) for ``t2 >= t1``."""
    if t2 < t1:
        raise TimeOrderViolation(f"retarded propagator needs t2 >= t1, got {t1} -> {t2}")
    return PropagatorMatrix(grid, _factors(grid, potential, t1, t2, dt, channel), t1, t2, "retarded")


def advanced(grid: SpatialGrid, potential: PotentialSpec, t1: float, t2: float, *,
             dt: float, channel: int | None = None) -> PropagatorMatrix:
    """K_A carrying values from ``t2`` back to ``t1 <= t2``; ``-K_A(t1,t1) = I``."""
    if t2 < t1:
        raise TimeOrderViolation(f"advanced propagator needs t1 <= t2, got {t1}, {t2}")
    return PropagatorMatrix(grid, _factors(grid, potential, t1, t2, dt, channel), t2, t1, "advanced")


def backward_row(psi_f_end: WaveField, prop: PropagatorMatrix) -> np.ndarray:
    """Row vector ``psi_f(t2)^H P(t2, t)``; its conjugate is psi_f at ``t``."""
    return np.conj(psi_f_end.values) @ prop.matrix


def sandwich(psi_f_end: WaveField, prop: PropagatorMatrix, psi_i_start: WaveField) -> complex:
    """``<psi_f(t2)| P(t2,t1) |psi_i(t1)>`` with the grid weight dx."""
    return complex(np.conj(psi_f_end.values) @ (prop.matrix @ psi_i_start.values) * prop.grid.dx)


def _check_order(t1, t, t2):
    if not (t1 <= t <= t2):
        raise TimeOrderViolation(f"need t1 <= t <= t2, got {t1}, {t}, {t2}")


def broken_line_density(obs: ObservableSpec, psi_f_end: WaveField, psi_i_start: WaveField,
                        potential: PotentialSpec, t1: float, t: float, t2: float, *,
                        dt: float) -> DensityField:
    """Density at ``t`` from breaking the line P(t2, t1) at ``t``.

    ``(1/A) [psi_f^H P(t2,t)] Q_x [P(t,t1) psi_i]`` with ``A`` the unbroken
    sandwich ``psi_f^H P(t2,t1) psi_i``.
    """
    _check_order(t1, t, t2)
    if abs(psi_f_end.time - t2) > 1e-12 or abs(psi_i_start.time - t1) > 1e-12:
        raise TimeOrderViolation("boundary states must carry the times t2 and t1")
    grid = psi_i_start.grid
    p_in = retarded(grid, potential, t1, t, dt=dt)
    p_out = retarded(grid, potential, t, t2, dt=dt)
    a = sandwich(psi_f_end, p_out @ p_in, psi_i_start)
    col = p_in.matrix @ psi_i_start.values
    f_t = np.conj(backward_row(psi_f_end, p_out))
    return density_from_arrays(obs, f_t, col, grid, a, t)


# ---------------------------------------------------------------------------
# Two identical fermions: amplitude and density from four single-particle lines

@dataclass(frozen=True, eq=False)
class _Lines:
    grid: SpatialGrid
    cols: dict       # initial label -> P(t,t1) psi_i
    rows: dict       # final label   -> conj of psi_f^H P(t2,t), i.e. psi_f at t
    lines: dict      # (final, initial) -> <f|P(t2,t1)|i>


def _lines(states: dict, potential: PotentialSpec, t1: float, t: float, t2: float, dt: float) -> _Lines:
    grid = next(iter(states.values())).grid
    for s in states.values():
        if s.grid != grid:
            raise GridMismatch("boundary states live on different grids")
    p_in = retarded(grid, potential, t1, t, dt=dt)
    p_out = retarded(grid, potential, t, t2, dt=dt)
    full = p_out @ p_in
    inits = [k for k in states if k.startswith("i")]
    finals = [k for k in states if k.startswith("f")]
    cols = {k: p_in.matrix @ states[k].values for k in inits}
    rows = {k: np.conj(backward_row(states[k], p_out)) for k in finals}
    lines = {(f, i): sandwich(states[f], full, states[i]) for f in finals for i in inits}
    return _Lines(grid, cols, rows, lines)


def _fermion_states(psi_ia, psi_ib, psi_fa, psi_fb, t1, t2) -> dict:
    states = {"ia": psi_ia, "ib": psi_ib, "fa": psi_fa, "fb": psi_fb}
    for k, s in states.items():
        want = t1 if k.startswith("i") else t2
        if abs(s.time - want) > 1e-12:
            raise TimeOrderViolation(f"state {k} carries time {s.time}, expected {want}")
    return states


# (sign, line pairs): direct diagram then exchange diagram
DIAGRAMS = ((+1, (("fa", "ia"), ("fb", "ib"))),
            (-1, (("fb", "ia"), ("fa", "ib"))))


def _amplitude_from_lines(lines: dict) -> complex:
    return sum(sign * lines[l1] * lines[l2] for sign, (l1, l2) in DIAGRAMS)


def appendix_amplitude(psi_ia: WaveField, psi_ib: WaveField, psi_fa: WaveField, psi_fb: WaveField,
                       potential: PotentialSpec, t1: float, t2: float, *, dt: float) -> complex:
    """Direct minus exchange: ``L(fa,ia) L(fb,ib) - L(fb,ia) L(fa,ib)``."""
    if t2 < t1:
        raise TimeOrderViolation("need t1 <= t2")
    states = _fermion_states(psi_ia, psi_ib, psi_fa, psi_fb, t1, t2)
    grid = psi_ia.grid
    p = retarded(grid, potential, t1, t2, dt=dt)
    lines = {(f, i): sandwich(states[f], p, states[i])
             for f in ("fa", "fb") for i in ("ia", "ib")}
    return _amplitude_from_lines(lines)


def appendix_terms(obs: ObservableSpec, psi_ia, psi_ib, psi_fa, psi_fb, potential: PotentialSpec,
                   t1: float, t: float, t2: float, *, dt: float):
    """The four broken-line terms (before division by A) and A itself.

    Keys are ``(diagram, broken_line)`` with diagram 0 direct, 1 exchange.
    """
    _check_order(t1, t, t2)
    states = _fermion_states(psi_ia, psi_ib, psi_fa, psi_fb, t1, t2)
    L = _lines(states, potential, t1, t, t2, dt)
    a = _amplitude_from_lines(L.lines)
    terms = {}
    for d, (sign, pair) in enumerate(DIAGRAMS):
        for j, (f, i) in enumerate(pair):
            other = pair[1 - j]
            broken = density_numerator(obs, L.rows[f], L.cols[i], L.grid)
            terms[(d, (f, i))] = sign * broken * L.lines[other]
    return terms, a, L


def appendix_density(obs: ObservableSpec, psi_ia, psi_ib, psi_fa, psi_fb, potential: PotentialSpec,
                     t1: float, t: float, t2: float, *, dt: float) -> DensityField:
    """Overall density of two non-interacting identical fermions from propagator lines."""
    terms, a, L = appendix_terms(obs, psi_ia, psi_ib, psi_fa, psi_fb, potential, t1, t, t2, dt=dt)
    norms = [s.norm() for s in (psi_ia, psi_ib, psi_fa, psi_fb)]
    floor = amplitude_floor(norms[0] * norms[1], norms[2] * norms[3])
    if not abs(a) > floor:
        raise AmplitudeNearZero(a, floor)
    values = sum(terms.values()) / a
    return DensityField(L.grid, values, obs, t, a)


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SubstitutionReport:
    term_deviation: dict          # term label -> max relative deviation
    max_relative_deviation: float
    sum_deviation: float          # substituted sum vs appendix_density / wavefunction density
    identity_bookkeeping: float   # |sum of integrated identity-substituted terms - lines broken|
    broken_lines: int
    tolerance: float = 1e-9

    @property
    def passed(self) -> bool:
        return (self.max_relative_deviation < self.tolerance
                and self.sum_deviation < self.tolerance
                and self.identity_bookkeeping < self.tolerance)


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def substitution_check(obs: ObservableSpec, boundary_states: dict, potential: PotentialSpec,
                       times, *, dt: float, tolerance: float = 1e-9) -> SubstitutionReport:
    """Check the line-substitution rule term by term against a wavefunction route.

    ``boundary_states`` holds either ``{"i", "f"}`` (one particle, one line)
    or ``{"ia", "ib", "fa", "fb"}`` (two identical fermions).  Each amplitude
    line ``L(f,i)`` is replaced by ``(1/A) K(t2,t) Q K(t,t1)`` via the
    propagator matrices.  The independent route evolves the single-particle
    states with the stepper, forms the matching product pieces on the
    two-particle grid and integrates out the spectator coordinate.
    """
    t1, t, t2 = times
    _check_order(t1, t, t2)
    if set(boundary_states) == {"i", "f"}:
        psi_i, psi_f = boundary_states["i"], boundary_states["f"]
        sub = broken_line_density(obs, psi_f, psi_i, potential, t1, t, t2, dt=dt)
        gi = evolve_interval(psi_i, potential, t, dt)
        gf = evolve_interval(psi_f, potential, t, dt)
        wf = density(obs, gf, gi)
        dev = _rel(sub.values, wf.values)
        ident = broken_line_density(ObservableSpec.mass(1.0), psi_f, psi_i, potential, t1, t, t2, dt=dt)
        book = abs(np.sum(ident.values) * ident.grid.dx - 1.0)
        return SubstitutionReport({"line": dev}, dev, dev, book, 1, tolerance)

    if set(boundary_states) != {"ia", "ib", "fa", "fb"}:
        raise ValueError("boundary_states must have keys {i, f} or {ia, ib, fa, fb}")
    st = boundary_states
    terms, a, L = appendix_terms(obs, st["ia"], st["ib"], st["fa"], st["fb"], potential, t1, t, t2, dt=dt)
    grid = L.grid
    evolved = {k: evolve_interval(v, potential, t, dt).values for k, v in st.items()}
    deviations = {}
    for (d, (f, i)), term in terms.items():
        sign, pair = DIAGRAMS[d]
        f_other, i_other = pair[1 - pair.index((f, i))]
        # x on the broken line's coordinate, x' on the spectator line
        fpiece = np.multiply.outer(evolved[f], evolved[f_other])
        ipiece = np.multiply.outer(evolved[i], evolved[i_other])
        num = density_numerator(obs, fpiece, ipiece, grid).sum(axis=1) * grid.dx
        deviations[f"d{d}:{f}|{i}"] = _rel(term / a, sign * num / a)
    substituted = sum(terms.values()) / a
    dens = appendix_density(obs, st["ia"], st["ib"], st["fa"], st["fb"], potential, t1, t, t2, dt=dt)
    sum_dev = _rel(substituted, dens.values)
    ident_terms, a_id, _ = appendix_terms(ObservableSpec.mass(1.0), st["ia"], st["ib"], st["fa"], st["fb"],
                                          potential, t1, t, t2, dt=dt)
    integrated = sum(np.sum(v) for v in ident_terms.values()) * grid.dx / a_id
    book = abs(integrated - 2.0)
    return SubstitutionReport(deviations, max(deviations.values()), sum_dev, float(book), 2, tolerance)


def export_propagator(prop: PropagatorMatrix, path_stem) -> tuple:
    """Write ``<stem>.bin`` (row-major complex128) and ``<stem>.json`` sidecar."""
    stem = Path(path_stem)
    bin_path = stem.with_suffix(".bin")
    json_path = stem.with_suffix(".json")
    np.ascontiguousarray(prop.matrix, dtype=np.complex128).tofile(bin_path)
    json_path.write_text(json.dumps(prop.to_json(), indent=2))
    return bin_path, json_path


def load_propagator_matrix(path_stem) -> tuple:
    """Read back an exported matrix and its sidecar dict."""
    stem = Path(path_stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    n = int(meta["n_points"])
    mat = np.fromfile(stem.with_suffix(".bin"), dtype=np.complex128).reshape(n, n)
    return mat, meta
