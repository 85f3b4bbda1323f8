"""JSON scenario configuration (``"schema": 1``) and reference configs."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, UnreachableTime
from .evolution import count_steps
from .fields import (
    SpatialGrid,
    WaveField,
    make_gaussian,
    make_narrow_peak,
    make_plane_wave,
    random_field,
)

SCHEMA_VERSION = 1
SCENARIOS = ("slit", "two_position", "double_slit", "stern_gerlach",
             "momentum_consistency", "triple_measurement")


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    name: str
    grid: SpatialGrid
    t1: float
    dt: float
    n_steps: int
    states: dict
    potential: dict
    masks: tuple
    snapshot_times: tuple
    assertions: dict
    params: dict
    units: dict

    @property
    def t2(self) -> float:
        return self.t1 + self.n_steps * self.dt

    def step_index(self, t: float) -> int:
        try:
            k = count_steps(self.t1, t, self.dt)
        except UnreachableTime as exc:
            raise ConfigError(f"time {t} is not on the step lattice") from exc
        if not 0 <= k <= self.n_steps:
            raise ConfigError(f"time {t} lies outside [t1, t2]")
        return k

    def time_at(self, k: int) -> float:
        return self.t1 + k * self.dt

    def threshold(self, key: str, default: float) -> float:
        return float(self.assertions.get(key, default))

    def param(self, key: str, default=None):
        return self.params.get(key, default)

    @classmethod
    def from_json(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        if data.get("schema") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema {data.get('schema')!r}, expected {SCHEMA_VERSION}")
        name = data.get("name")
        if name not in SCENARIOS:
            raise ConfigError(f"unknown scenario {name!r}")
        try:
            grid = SpatialGrid.from_json(data["grid"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad grid: {exc}") from exc
        times = data.get("time", {})
        try:
            t1 = float(times.get("t1", 0.0))
            dt = float(times["dt"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad time block: {exc}") from exc
        if not (dt > 0 and math.isfinite(dt)):
            raise ConfigError("dt must be positive")
        if "n_steps" in times:
            n_steps = int(times["n_steps"])
        elif "t2" in times:
            try:
                n_steps = count_steps(t1, float(times["t2"]), dt)
            except UnreachableTime as exc:
                raise ConfigError(str(exc)) from exc
        else:
            raise ConfigError("time block needs n_steps or t2")
        if n_steps < 0:
            raise ConfigError("t2 must not precede t1")
        cfg = cls(name=name, grid=grid, t1=t1, dt=dt, n_steps=n_steps,
                  states=dict(data.get("states", {})),
                  potential=dict(data.get("potential", {"preset": "free"})),
                  masks=tuple(data.get("masks", ())),
                  snapshot_times=(),
                  assertions=dict(data.get("assertions", {})),
                  params=dict(data.get("params", {})),
                  units=dict(data.get("units", {})))
        snaps = data.get("snapshot_times")
        if snaps is None:
            count = int(data.get("snapshot_count", 21))
            idx = sorted(set(np.rint(np.linspace(0, n_steps, max(count, 1))).astype(int).tolist()))
            snaps = [cfg.time_at(k) for k in idx]
        snaps = tuple(float(t) for t in snaps)
        if not snaps:
            raise ConfigError("at least one snapshot time is needed")
        if any(b <= a for a, b in zip(snaps, snaps[1:])):
            raise ConfigError("snapshot times must be strictly increasing")
        for t in snaps:
            cfg.step_index(t)
        object.__setattr__(cfg, "snapshot_times", snaps)
        for key in ("length", "time"):
            if not float(cfg.units.get(key, 1.0)) > 0:
                raise ConfigError("unit scales must be positive")
        return cfg

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "name": self.name,
            "grid": self.grid.to_json(),
            "time": {"t1": self.t1, "dt": self.dt, "n_steps": self.n_steps},
            "states": self.states,
            "potential": self.potential,
            "masks": list(self.masks),
            "snapshot_times": list(self.snapshot_times),
            "assertions": self.assertions,
            "params": self.params,
            "units": self.units,
        }


def load_config(path) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return ScenarioConfig.from_json(data)


def build_state(spec: dict, grid: SpatialGrid, time: float) -> WaveField:
    """Boundary state from its JSON description."""
    kind = spec.get("kind", "gaussian")
    k = float(spec.get("wavenumber", 0.0))
    if kind == "gaussian":
        return make_gaussian(grid, float(spec.get("center", 0.0)), float(spec["width"]), k, time)
    if kind == "narrow_peak":
        return make_narrow_peak(grid, float(spec.get("center", 0.0)), k, time)
    if kind == "plane_wave":
        return make_plane_wave(grid, int(spec["mode"]), time)
    if kind == "random":
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        smooth = spec.get("smooth")
        return random_field(grid, rng, time, None if smooth is None else int(smooth))
    raise ConfigError(f"unknown state kind {kind!r}")


# ---------------------------------------------------------------------------
# Reference configurations

def _lattice_times(t1, dt, indices):
    return [t1 + k * dt for k in sorted(set(indices))]


def _two_position():
    n, dx = 512, 0.1
    sigma = 3 * dx
    # each half of the interval triples a free packet of width sigma
    t_half = math.sqrt(8.0) * sigma**2
    n_steps = 2000
    dt = 2 * t_half / n_steps
    idx = list(range(0, n_steps + 1, 50)) + [1, n_steps - 1]
    return {
        "name": "two_position",
        "grid": {"n_points": n, "x_min": -25.6, "x_max": 25.6, "boundary": "periodic"},
        "time": {"t1": 0.0, "dt": dt, "n_steps": n_steps},
        "states": {"psi_i": {"kind": "narrow_peak", "center": 0.0},
                   "psi_f": {"kind": "narrow_peak", "center": 0.0}},
        "potential": {"preset": "free"},
        "snapshot_times": _lattice_times(0.0, dt, idx),
        "assertions": {"width_ratio_min": 2.0, "symmetry_tol": 0.05},
    }


def _slit():
    dt, n_steps, k_b = 0.0025, 800, 400
    idx = list(range(0, n_steps + 1, 40)) + [k_b - 1, k_b + 1]
    return {
        "name": "slit",
        "grid": {"n_points": 512, "x_min": -25.6, "x_max": 25.6, "boundary": "periodic"},
        "time": {"t1": 0.0, "dt": dt, "n_steps": n_steps},
        "states": {"psi_i": {"kind": "gaussian", "center": 0.0, "width": 0.5},
                   "psi_f": {"kind": "gaussian", "center": 2.0, "width": 0.5}},
        "potential": {"preset": "free"},
        "masks": [{"time": k_b * dt, "centers": [1.0], "width_cells": 5}],
        "snapshot_times": _lattice_times(0.0, dt, idx),
        "assertions": {"outside_slit_max": 1e-6, "psi_f_in_slit_min": 0.9},
        "params": {"slit_margin_cells": 5},
    }


def _double_slit():
    dt, n_steps, k_b = 0.005, 800, 400
    corridor_steps = 50
    idx = list(range(0, n_steps + 1, 20)) + list(range(k_b - corridor_steps, k_b + 1))
    return {
        "name": "double_slit",
        "grid": {"n_points": 512, "x_min": -25.6, "x_max": 25.6, "boundary": "periodic"},
        "time": {"t1": 0.0, "dt": dt, "n_steps": n_steps},
        "states": {"psi_i": {"kind": "gaussian", "center": 0.0, "width": 0.5},
                   "psi_f": {"kind": "gaussian", "center": 0.0, "width": 0.5}},
        "potential": {"preset": "free"},
        "snapshot_times": _lattice_times(0.0, dt, idx),
        "assertions": {"corridor_ratio_max": 0.05, "corridor_symmetry_tol": 0.02},
        "params": {"barrier_time": k_b * dt, "slit_centers": [-3.0, 3.0], "width_cells": 5,
                   "closed_slit": 1, "corridor_duration": corridor_steps * dt,
                   "corridor_halfwidth": 0.5},
    }


def _stern_gerlach():
    dt, n_steps = 0.0025, 600
    return {
        "name": "stern_gerlach",
        "grid": {"n_points": 512, "x_min": -25.6, "x_max": 25.6, "boundary": "periodic"},
        "time": {"t1": 0.0, "dt": dt, "n_steps": n_steps},
        "states": {"psi_i": {"kind": "gaussian", "center": 0.0, "width": 1.0}},
        "potential": {"preset": "sg_gradient", "gradient": 18.0, "t_on": 0.25, "t_off": 0.75},
        "snapshot_count": 31,
        "assertions": {"unmatched_fraction_max": 1e-8, "branch_separation_min": 6.0,
                       "pre_measurement_min": 0.5},
        "params": {"outcome": "+"},
    }


def _momentum_consistency():
    return {
        "name": "momentum_consistency",
        "grid": {"n_points": 256, "x_min": 0.0, "x_max": 2 * math.pi, "boundary": "periodic"},
        "time": {"t1": 0.0, "dt": 0.01, "n_steps": 0},
        "snapshot_times": [0.0],
        "assertions": {"eigen_error_max": 1e-8},
        "params": {"modes": list(range(-5, 6)), "draws": 20, "seed": 20240607,
                   "sides": ["initial", "final"], "orthogonal_probe": True},
    }


def _triple_measurement():
    dt = 0.01
    return {
        "name": "triple_measurement",
        "grid": {"n_points": 256, "x_min": -12.8, "x_max": 12.8, "boundary": "periodic"},
        "time": {"t1": 0.0, "dt": dt, "n_steps": 200},
        "states": {"psi_1": {"kind": "gaussian", "center": -1.0, "width": 1.0, "wavenumber": 1.0},
                   "psi_2": {"kind": "gaussian", "center": 0.0, "width": 0.8},
                   "psi_3": {"kind": "gaussian", "center": 1.5, "width": 1.2, "wavenumber": -0.5}},
        "potential": {"preset": "free"},
        "snapshot_count": 21,
        "params": {"t_measure": 100 * dt, "observable": "mass"},
    }


_DEFAULTS = {
    "two_position": _two_position,
    "slit": _slit,
    "double_slit": _double_slit,
    "stern_gerlach": _stern_gerlach,
    "momentum_consistency": _momentum_consistency,
    "triple_measurement": _triple_measurement,
}


def default_config(name: str) -> dict:
    """Reference config for ``name`` as a JSON-ready dict."""
    if name not in _DEFAULTS:
        raise ConfigError(f"unknown scenario {name!r}")
    data = {"schema": SCHEMA_VERSION}
    data.update(_DEFAULTS[name]())
    return copy.deepcopy(data)
