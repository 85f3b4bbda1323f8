"""Numerical checks of the mixed Lagrangian's consequences.

Trajectories are sequences of :class:`~biwave.fields.WaveField` snapshots on
a uniform time lattice (ascending time).  Time derivatives are centered
differences of neighbouring snapshots, so every check needs at least three
snapshots and reports on interior times only.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Literal, Sequence

import numpy as np

from .densities import face_current, face_divergence
from .errors import GridMismatch, MissingSnapshots, UnreachableTime
from .evolution import PotentialSpec, hamiltonian_matrix
from .fields import WaveField, edges_to_nodes, forward_edges

Quantity = Literal["schrodinger_i", "schrodinger_f", "continuity", "amplitude_drift", "energy_drift"]


@dataclass(frozen=True)
class ResidualReport:
    quantity: Quantity
    max_abs: float
    l2: float
    per_time: tuple = ()          # one value per reported time
    times: tuple = ()
    dt: float = 0.0
    dx: float = 0.0
    n_points: int = 0
    worst_index: int = -1         # index into the trajectory
    flagged: tuple = field(default=())

    def __post_init__(self):
        if not (np.isfinite(self.max_abs) and np.isfinite(self.l2)) or self.max_abs < 0 or self.l2 < 0:
            raise ValueError("residual norms must be finite and non-negative")

    def to_json_line(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _lattice(traj: Sequence[WaveField]) -> tuple[float, np.ndarray]:
    if len(traj) < 3:
        raise MissingSnapshots(f"need at least 3 snapshots, got {len(traj)}")
    times = np.array([s.time for s in traj])
    steps = np.diff(times)
    dt = float(steps.mean())
    if dt <= 0 or np.max(np.abs(steps - dt)) > 1e-9 * abs(dt):
        raise ValueError("snapshots must be ascending and uniformly spaced in time")
    grid = traj[0].grid
    if any(s.grid != grid for s in traj):
        raise GridMismatch("snapshots live on different grids")
    return dt, times


def _pair(traj_i, traj_f):
    dt_i, times_i = _lattice(traj_i)
    dt_f, times_f = _lattice(traj_f)
    if len(traj_i) != len(traj_f) or np.max(np.abs(times_i - times_f)) > 1e-9 * dt_i:
        raise ValueError("initial and final trajectories must share their time lattice")
    if traj_i[0].grid != traj_f[0].grid:
        raise GridMismatch("trajectories live on different grids")
    return dt_i, times_i


def _potential_at(potential: PotentialSpec, t: float, dt: float, channel=None) -> np.ndarray:
    # the segment the forward step from t belongs to
    try:
        seg = potential.segment_for_step(t, dt)
    except UnreachableTime:
        seg = potential.segment_at(t)
    return seg.channel_values(channel)


def lagrangian_density(psi_f: Sequence[WaveField], psi_i: Sequence[WaveField],
                       potential: PotentialSpec, index: int | None = None) -> np.ndarray:
    """Pointwise mixed Lagrangian at an interior snapshot (default: the middle one).

    ``-(1/2)(grad f)* (grad g) + (i/2)(f* dg/dt - df*/dt g) - V f* g`` with the
    gradient product taken on cell edges, as in the energy density.
    """
    dt, times = _pair(psi_i, psi_f)
    n = len(psi_i)
    k = n // 2 if index is None else index
    if not 0 < k < n - 1:
        raise MissingSnapshots("the Lagrangian needs a snapshot on each side of the evaluation time")
    grid = psi_i[0].grid
    f, g = psi_f[k].values, psi_i[k].values
    dg = (psi_i[k + 1].values - psi_i[k - 1].values) / (2 * dt)
    df = (psi_f[k + 1].values - psi_f[k - 1].values) / (2 * dt)
    grad = edges_to_nodes(np.conj(forward_edges(f, grid)) * forward_edges(g, grid), grid)
    v = _potential_at(potential, times[k], dt)
    return -0.5 * grad + 0.5j * (np.conj(f) * dg - np.conj(df) * g) - v * np.conj(f) * g


def _schrodinger_residuals(traj: Sequence[WaveField], potential: PotentialSpec, conjugate: bool,
                           channel=None):
    dt, times = _lattice(traj)
    grid = traj[0].grid
    vals = np.array([s.values for s in traj])
    per_time_max = []
    per_time_l2 = []
    for k in range(1, len(traj) - 1):
        h = hamiltonian_matrix(grid, _potential_at(potential, times[k], dt, channel))
        if conjugate:
            # -(1/2) lap f* + V f* = -i d f*/dt
            fc = np.conj(vals[k])
            r = h @ fc + 1j * (np.conj(vals[k + 1]) - np.conj(vals[k - 1])) / (2 * dt)
        else:
            r = 1j * (vals[k + 1] - vals[k - 1]) / (2 * dt) - h @ vals[k]
        per_time_max.append(float(np.max(np.abs(r))))
        per_time_l2.append(float(np.sqrt(np.sum(np.abs(r) ** 2) * grid.dx)))
    return dt, times[1:-1], np.array(per_time_max), np.array(per_time_l2)


def field_equation_residuals(trajectory_i: Sequence[WaveField], trajectory_f: Sequence[WaveField],
                             potential: PotentialSpec, flag_threshold: float = 1e-4,
                             channel=None) -> list[ResidualReport]:
    """Residuals of both Schrodinger equations at interior snapshot times.

    Returns ``[schrodinger_i, schrodinger_f]``.  ``flagged`` lists trajectory
    indices whose max residual exceeds ``flag_threshold``.
    """
    reports = []
    for quantity, traj, conj in (("schrodinger_i", trajectory_i, False),
                                 ("schrodinger_f", trajectory_f, True)):
        dt, times, pmax, pl2 = _schrodinger_residuals(traj, potential, conj, channel)
        worst = int(np.argmax(pmax)) + 1
        flagged = tuple(int(k) + 1 for k in np.nonzero(pmax > flag_threshold)[0])
        grid = traj[0].grid
        reports.append(ResidualReport(quantity, float(pmax.max()), float(pl2.max()),
                                      tuple(pmax.tolist()), tuple(times.tolist()), dt, grid.dx,
                                      grid.n_points, worst, flagged))
    return reports


def amplitude_trace(trajectory_i, trajectory_f) -> np.ndarray:
    return np.array([np.vdot(f.values, i.values) * i.grid.dx
                     for i, f in zip(trajectory_i, trajectory_f)])


def noether_checks(trajectory_i: Sequence[WaveField], trajectory_f: Sequence[WaveField],
                   potential: PotentialSpec, e: float = 1.0, m: float = 1.0) -> list[ResidualReport]:
    """Continuity, amplitude drift and total-energy drift for a mixed pair.

    (a) ``d/dt (e f* g / A) + div J`` with the staggered face current, which
        closes the semi-discrete balance exactly; what remains is the
        O(dt^2) error of the centered time difference.
    (b) ``|A(t) - A(t_1)|``.
    (c) ``|E(t) - E(t_1)|`` with ``E = <f|H(t)|g>/A``; ``worst_index`` marks the
        largest single-step jump, which sits at a potential switch if any.
    """
    dt, times = _pair(trajectory_i, trajectory_f)
    grid = trajectory_i[0].grid
    if m != 1.0:
        raise ValueError("the stepper uses m = 1")
    amps = amplitude_trace(trajectory_i, trajectory_f)
    a0 = amps[0]
    g = np.array([s.values for s in trajectory_i])
    f = np.array([s.values for s in trajectory_f])
    rho = e * np.conj(f) * g / a0
    cont_max, cont_l2 = [], []
    for k in range(1, len(times) - 1):
        drho = (rho[k + 1] - rho[k - 1]) / (2 * dt)
        div = face_divergence(face_current(f[k], g[k], grid, a0, e, m), grid)
        r = drho + div
        cont_max.append(float(np.max(np.abs(r))))
        cont_l2.append(float(np.sqrt(np.sum(np.abs(r) ** 2) * grid.dx)))
    cont_max = np.array(cont_max)
    common = dict(dt=dt, dx=grid.dx, n_points=grid.n_points)
    continuity = ResidualReport("continuity", float(cont_max.max()), float(max(cont_l2)),
                                tuple(cont_max.tolist()), tuple(times[1:-1].tolist()),
                                worst_index=int(np.argmax(cont_max)) + 1, **common)
    drift = np.abs(amps - a0)
    amp_rep = ResidualReport("amplitude_drift", float(drift.max()), float(drift.max()),
                             tuple(drift.tolist()), tuple(times.tolist()),
                             worst_index=int(np.argmax(drift)), **common)
    energies = []
    for k, t in enumerate(times):
        h = hamiltonian_matrix(grid, _potential_at(potential, t, dt))
        energies.append(np.vdot(f[k], h @ g[k]) * grid.dx / amps[k])
    energies = np.array(energies)
    e_drift = np.abs(energies - energies[0])
    jumps = np.abs(np.diff(energies))
    energy_rep = ResidualReport("energy_drift", float(e_drift.max()), float(e_drift.max()),
                                tuple(e_drift.tolist()), tuple(times.tolist()),
                                worst_index=int(np.argmax(jumps)) + 1 if len(jumps) else 0, **common)
    return [continuity, amp_rep, energy_rep]


def convergence_rate(coarse: float, fine: float) -> float:
    """Observed order from residuals at dt and dt/2."""
    return float(np.log2(coarse / fine))
