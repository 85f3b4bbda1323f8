"""Scenario reports and their on-disk form.

Layout of an output directory::

    <quantity>.csv        t, x, re, im   (re only with real_part=True)
    amplitude_trace.csv   run, t, re, im, floor
    report.json           config, assertions, flags, diagnostics

Floats are written with ``repr`` so a CSV round trip is exact and repeated
runs of one config produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class Assertion:
    name: str
    measured: float
    threshold: float
    comparison: str  # "<", "<=", ">", ">="

    @property
    def passed(self) -> bool:
        m, t = self.measured, self.threshold
        if not math.isfinite(m):
            return False
        return {"<": m < t, "<=": m <= t, ">": m > t, ">=": m >= t}[self.comparison]

    def to_json(self) -> dict:
        measured = self.measured if math.isfinite(self.measured) else None
        return {"name": self.name, "measured": measured, "threshold": self.threshold,
                "comparison": self.comparison, "pass": self.passed}

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.measured:.6g} {self.comparison} {self.threshold:.6g}"


@dataclass
class ScenarioReport:
    name: str
    config: dict
    x: np.ndarray
    tables: dict = field(default_factory=dict)        # quantity -> list[(t, complex array)]
    assertions: list = field(default_factory=list)
    amplitude_trace: list = field(default_factory=list)  # [(run, t, complex, floor)]
    flags: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def assertion(self, name: str) -> Assertion:
        for a in self.assertions:
            if a.name == name:
                return a
        raise KeyError(name)

    def add(self, name: str, measured: float, threshold: float, comparison: str) -> Assertion:
        if any(a.name == name for a in self.assertions):
            raise ValueError(f"assertion {name!r} recorded twice")
        a = Assertion(name, float(measured), float(threshold), comparison)
        self.assertions.append(a)
        return a

    def add_table(self, quantity: str, t: float, values) -> None:
        self.tables.setdefault(quantity, []).append((float(t), np.asarray(values, dtype=complex)))

    def to_json(self) -> dict:
        return {
            "schema": 1,
            "scenario": self.name,
            "passed": self.passed,
            "assertions": [a.to_json() for a in self.assertions],
            "flags": list(self.flags),
            "diagnostics": _jsonable(self.diagnostics),
            "config": self.config,
            "quantities": sorted(self.tables),
        }

    def write(self, out_dir, real_part: bool = False, length_scale: float = 1.0,
              time_scale: float = 1.0) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        xs = [repr(float(v) * length_scale) for v in self.x]
        for quantity, rows in self.tables.items():
            with open(out / f"{quantity}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["t", "x", "re"] if real_part else ["t", "x", "re", "im"])
                for t, vals in rows:
                    ts = repr(t * time_scale)
                    for xk, v in zip(xs, vals):
                        if real_part:
                            w.writerow([ts, xk, repr(float(v.real))])
                        else:
                            w.writerow([ts, xk, repr(float(v.real)), repr(float(v.imag))])
        with open(out / "amplitude_trace.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["run", "t", "re", "im", "floor"])
            for run, t, a, floor in self.amplitude_trace:
                w.writerow([run, repr(float(t) * time_scale), repr(float(a.real)), repr(float(a.imag)),
                            repr(float(floor))])
        (out / "report.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def read_table(path) -> dict:
    """Read a quantity CSV into ``{t: (x, values)}`` (values complex)."""
    out: dict = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        has_im = "im" in header
        for row in r:
            t = float(row[0])
            x = float(row[1])
            v = complex(float(row[2]), float(row[3]) if has_im else 0.0)
            xs, vs = out.setdefault(t, ([], []))
            xs.append(x)
            vs.append(v)
    return {t: (np.array(xs), np.array(vs)) for t, (xs, vs) in out.items()}


def read_trace(path) -> list:
    """Read ``amplitude_trace.csv`` back into ``[(run, t, A, floor)]``."""
    out = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for run, t, re_, im, floor in r:
            out.append((run, float(t), complex(float(re_), float(im)), float(floor)))
    return out
