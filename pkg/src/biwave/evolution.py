"""Crank-Nicolson stepping of wave fields, forwards and backwards in time.

The step operator is kept as an explicit dense unitary matrix so that its
products are the discrete propagators used in :mod:`biwave.propagators`.
Backward steps use the conjugate transpose of the forward matrix, never a
separately derived scheme, so forward-then-backward is the identity to
rounding.
"""

from __future__ import annotations

import hashlib
import math
import threading
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import ConfigError, GridMismatch, SingularSolve, UnreachableTime
from .fields import SpatialGrid, WaveField, second_difference_matrix, slit_mask

STEP_TOL = 1e-9  # fraction of dt


@dataclass(frozen=True, eq=False)
class Segment:
    """Constant potential on ``[t_start, t_end]``.

    ``channel_offsets`` optionally holds one extra potential per internal
    channel (the two Stern-Gerlach spin channels), added on top of ``values``.
    """

    t_start: float
    t_end: float
    values: np.ndarray
    channel_offsets: tuple | None = None
    label: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError("segment potential must be a finite 1-D array")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        if not self.t_end > self.t_start:
            raise ValueError(f"empty segment [{self.t_start}, {self.t_end}]")
        if self.channel_offsets is not None:
            offs = []
            for o in self.channel_offsets:
                o = np.array(o, dtype=float, copy=True)
                if o.shape != v.shape or not np.all(np.isfinite(o)):
                    raise ValueError("channel offsets must match the potential shape")
                o.flags.writeable = False
                offs.append(o)
            object.__setattr__(self, "channel_offsets", tuple(offs))

    def channel_values(self, channel: int | None) -> np.ndarray:
        if channel is None or self.channel_offsets is None:
            return self.values
        return self.values + self.channel_offsets[channel]


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """Piecewise-constant-in-time real potential.

    ``mask_events`` are (time, mask) apertures used by the scenario runners;
    the stepping functions here ignore them.
    """

    segments: tuple
    mask_events: tuple = ()
    name: str = "raw"

    def __post_init__(self):
        segs = tuple(sorted(self.segments, key=lambda s: s.t_start))
        if not segs:
            raise ValueError("a potential needs at least one segment")
        n = segs[0].values.shape[0]
        for a, b in zip(segs, segs[1:]):
            if b.values.shape[0] != n:
                raise ValueError("segments disagree on grid size")
            if not math.isclose(a.t_end, b.t_start, rel_tol=0, abs_tol=1e-12):
                raise ValueError(f"segments leave a gap or overlap at t={a.t_end} / {b.t_start}")
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "mask_events", tuple(sorted(self.mask_events, key=lambda e: e[0])))

    @classmethod
    def static(cls, values, name: str = "raw") -> "PotentialSpec":
        return cls((Segment(-math.inf, math.inf, values, label=name),), name=name)

    @property
    def n_points(self) -> int:
        return self.segments[0].values.shape[0]

    @property
    def is_static(self) -> bool:
        return len(self.segments) == 1

    @property
    def has_channels(self) -> bool:
        return any(s.channel_offsets is not None for s in self.segments)

    def segment_for_step(self, t: float, dt: float) -> Segment:
        """Segment containing the whole step from ``t`` to ``t + dt`` (dt may be negative)."""
        lo, hi = (t, t + dt) if dt > 0 else (t + dt, t)
        tol = STEP_TOL * abs(dt)
        for seg in self.segments:
            if seg.t_start - tol <= lo and hi <= seg.t_end + tol:
                return seg
        raise UnreachableTime(
            f"step [{lo}, {hi}] straddles a potential switch or leaves the covered interval")

    def segment_at(self, t: float) -> Segment:
        for seg in self.segments:
            if seg.t_start <= t < seg.t_end:
                return seg
        if t == self.segments[-1].t_end:
            return self.segments[-1]
        raise UnreachableTime(f"t={t} outside the potential's time range")

    def for_channel(self, channel: int) -> "PotentialSpec":
        segs = tuple(Segment(s.t_start, s.t_end, s.channel_values(channel), label=s.label)
                     for s in self.segments)
        return PotentialSpec(segs, self.mask_events, f"{self.name}[{channel}]")


# ---------------------------------------------------------------------------
# JSON presets

def parse_potential(spec: dict | str | None, grid: SpatialGrid) -> PotentialSpec:
    """Build a :class:`PotentialSpec` from its JSON form.

    Presets: ``free``, ``harmonic`` (omega, center), ``barrier`` (height,
    center, width), ``double_slit_mask_times`` (free motion plus aperture
    events), ``sg_gradient`` (gradient, t_on, t_off, base potential).  The raw
    form is ``{"segments": [{"t_start", "t_end", "values"}...]}``.
    """
    if spec is None:
        spec = {"preset": "free"}
    if isinstance(spec, str):
        spec = {"preset": spec}
    x = grid.x
    preset = spec.get("preset")
    if preset is None and "segments" in spec:
        segs = []
        for s in spec["segments"]:
            vals = np.asarray(s["values"], dtype=float)
            if vals.shape != (grid.n_points,):
                raise ConfigError("raw segment values must have n_points entries")
            offs = s.get("channel_offsets")
            segs.append(Segment(float(s.get("t_start", -math.inf)), float(s.get("t_end", math.inf)),
                                vals, None if offs is None else tuple(offs), s.get("label", "")))
        return PotentialSpec(tuple(segs), name="raw")
    if preset == "free":
        return PotentialSpec.static(np.zeros(grid.n_points), "free")
    if preset == "harmonic":
        omega = float(spec.get("omega", 1.0))
        c = float(spec.get("center", 0.0))
        return PotentialSpec.static(0.5 * omega**2 * (x - c) ** 2, "harmonic")
    if preset == "barrier":
        height = float(spec.get("height", 1.0))
        c = float(spec.get("center", 0.0))
        w = float(spec.get("width", 1.0))
        return PotentialSpec.static(np.where(np.abs(x - c) <= w / 2, height, 0.0), "barrier")
    if preset == "double_slit_mask_times":
        events = []
        for ev in spec.get("masks", []):
            mask = slit_mask(grid, ev.get("centers", []), int(ev.get("width_cells", 1)))
            events.append((float(ev["time"]), mask))
        base = PotentialSpec.static(np.zeros(grid.n_points), "double_slit_mask_times")
        return PotentialSpec(base.segments, tuple(events), base.name)
    if preset == "sg_gradient":
        lam = float(spec.get("gradient", 1.0))
        t_on = float(spec["t_on"])
        t_off = float(spec["t_off"])
        c = float(spec.get("center", 0.0))
        base = parse_potential(spec.get("base", "free"), grid)
        if not base.is_static:
            raise ConfigError("sg_gradient needs a static base potential")
        v = base.segments[0].values
        ramp = lam * (x - c)
        segs = (Segment(-math.inf, t_on, v, label="before"),
                Segment(t_on, t_off, v, (ramp, -ramp), label="magnet"),
                Segment(t_off, math.inf, v, label="after"))
        return PotentialSpec(segs, name="sg_gradient")
    raise ConfigError(f"unknown potential preset {preset!r}")


# ---------------------------------------------------------------------------
# Step operators

def hamiltonian_matrix(grid: SpatialGrid, potential_values, mass: float = 1.0) -> np.ndarray:
    """Dense ``H = -(1/2m) D2 + diag(V)``."""
    v = np.asarray(potential_values, dtype=float)
    if v.shape != (grid.n_points,):
        raise GridMismatch("potential length does not match grid")
    return -second_difference_matrix(grid) / (2.0 * mass) + np.diag(v)


def _potential_key(values: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(values, dtype=float).tobytes()).hexdigest()


@dataclass(frozen=True, eq=False)
class StepOperator:
    grid: SpatialGrid
    dt: float
    forward_matrix: np.ndarray
    key: tuple = field(default=())

    @cached_property
    def backward_matrix(self) -> np.ndarray:
        b = np.ascontiguousarray(self.forward_matrix.conj().T)
        b.flags.writeable = False
        return b

    def unitarity_error(self) -> float:
        u = self.forward_matrix
        return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))


_STEP_CACHE: dict = {}
_STEP_LOCK = threading.Lock()


def build_step(grid: SpatialGrid, potential_segment, dt: float) -> StepOperator:
    """Crank-Nicolson step ``U = (I + i dt H/2)^-1 (I - i dt H/2)``.

    ``potential_segment`` may be a :class:`Segment` or a raw array.  Operators
    are cached on (grid, dt, potential bytes), so repeated calls return the
    same object.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    values = potential_segment.values if isinstance(potential_segment, Segment) else potential_segment
    values = np.asarray(values, dtype=float)
    key = (grid, float(dt), _potential_key(values))
    with _STEP_LOCK:
        op = _STEP_CACHE.get(key)
    if op is not None:
        return op
    h = hamiltonian_matrix(grid, values)
    eye = np.eye(grid.n_points)
    lhs = eye + 0.5j * dt * h
    rhs = eye - 0.5j * dt * h
    try:
        lu = scipy.linalg.lu_factor(lhs, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularSolve(str(exc)) from exc
    if np.min(np.abs(np.diag(lu[0]))) < 1e-14:
        raise SingularSolve("Crank-Nicolson system is numerically singular")
    u = scipy.linalg.lu_solve(lu, rhs)
    u.flags.writeable = False
    op = StepOperator(grid, float(dt), u, key)
    with _STEP_LOCK:
        op = _STEP_CACHE.setdefault(key, op)
    return op


def clear_step_cache() -> None:
    with _STEP_LOCK:
        _STEP_CACHE.clear()


def step_forward(field: WaveField, op: StepOperator) -> WaveField:
    if field.grid != op.grid:
        raise GridMismatch("field and step operator live on different grids")
    return WaveField(field.grid, op.forward_matrix @ field.values, field.time + op.dt)


def step_backward(field: WaveField, op: StepOperator) -> WaveField:
    if field.grid != op.grid:
        raise GridMismatch("field and step operator live on different grids")
    return WaveField(field.grid, op.backward_matrix @ field.values, field.time - op.dt)


def count_steps(t_from: float, t_to: float, dt: float) -> int:
    n = round((t_to - t_from) / dt)
    if abs(n * dt - (t_to - t_from)) > STEP_TOL * dt + 1e-12 * max(1.0, abs(t_to), abs(t_from)):
        raise UnreachableTime(f"{t_to} is not reachable from {t_from} in whole steps of {dt}")
    return int(n)


def step_plan(grid: SpatialGrid, potential: PotentialSpec, t_from: float, n_steps: int,
              dt: float, channel: int | None = None) -> list:
    """Step operators for ``n_steps`` forward steps starting at ``t_from`` (time-ordered)."""
    ops = []
    for k in range(n_steps):
        seg = potential.segment_for_step(t_from + k * dt, dt)
        ops.append(build_step(grid, seg.channel_values(channel), dt))
    return ops


def evolve_interval(field: WaveField, potential: PotentialSpec, t_target: float, dt: float,
                    *, channel: int | None = None, snapshot_every: int | None = None,
                    snapshot_times: Sequence[float] | None = None):
    """Step ``field`` to ``t_target`` (forwards or backwards).

    Time tags are set as ``t0 + k*dt`` rather than accumulated.  With
    ``snapshot_every`` or ``snapshot_times`` a ``(final, snapshots)`` pair is
    returned, ``snapshots`` ordered in the direction of travel and including
    the starting field.
    """
    if potential.n_points != field.grid.n_points:
        raise GridMismatch("potential and field sizes differ")
    n = count_steps(field.time, t_target, dt)
    want = set()
    if snapshot_times is not None:
        for t in snapshot_times:
            k = count_steps(field.time, t, dt)
            if k * n < 0 or abs(k) > abs(n):
                raise UnreachableTime(f"snapshot time {t} outside the evolution interval")
            want.add(abs(k))
    record = snapshot_every is not None or snapshot_times is not None
    snaps = [field] if record and (snapshot_every is not None or 0 in want) else []
    if n == 0:
        return (field, snaps) if record else field
    t0 = field.time
    sign = 1 if n > 0 else -1
    ops = step_plan(field.grid, potential, t0 if n > 0 else t0 - abs(n) * dt, abs(n), dt, channel)
    if sign < 0:
        ops = ops[::-1]
    psi = field.values
    for j, op in enumerate(ops, start=1):
        psi = (op.forward_matrix if sign > 0 else op.backward_matrix) @ psi
        if record and ((snapshot_every and j % snapshot_every == 0) or j in want):
            snaps.append(WaveField(field.grid, psi, t0 + sign * j * dt))
    final = WaveField(field.grid, psi, t0 + n * dt)
    return (final, snaps) if record else final


def free_gaussian_width(width: float, elapsed: float, mass: float = 1.0) -> float:
    """Amplitude width parameter of a free Gaussian after ``elapsed`` time."""
    return width * math.sqrt(1.0 + (elapsed / (mass * width * width)) ** 2)
