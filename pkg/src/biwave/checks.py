"""Self-checks run by ``biwave check`` and ``biwave propcheck``.

Each check returns an :class:`~biwave.report.Assertion`; a suite passes
when all of them do.  Sizes are the desk-scale ones used by the test
suite, so both commands finish in well under a minute.
"""

from __future__ import annotations

import numpy as np

from .conservation import field_equation_residuals, lagrangian_density, noether_checks
from .densities import ObservableSpec, density, eigen_consistency_check, total
from .evolution import build_step, evolve_interval, parse_potential
from .fields import (
    SpatialGrid,
    make_gaussian,
    make_plane_wave,
    mode_wavenumber,
    random_field,
)
from .multibody import TwoParticleDensityInput, antisymmetrize, density_identical, evolve_many_body
from .propagators import (
    advanced,
    appendix_amplitude,
    appendix_density,
    broken_line_density,
    retarded,
    substitution_check,
)
from .report import Assertion

SEED = 20240607


def _rel(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))) / max(np.max(np.abs(b)), 1e-300))


# ---------------------------------------------------------------------------
# Invariants

def check_eigen_consistency(draws: int = 20) -> list:
    grid = SpatialGrid.from_interval(0.0, 2 * np.pi, 256)
    rng = np.random.default_rng(SEED)
    obs = ObservableSpec.momentum()
    worst = {"initial": 0.0, "final": 0.0}
    for side in worst:
        for mode in range(-5, 6):
            eigen = make_plane_wave(grid, mode)
            for _ in range(draws):
                rep = eigen_consistency_check(obs, side, eigen, random_field(grid, rng))
                worst[side] = max(worst[side], abs(rep.total - mode_wavenumber(grid, mode)))
    return [Assertion(f"eigen_consistency_{side}", err, 1e-8, "<") for side, err in worst.items()]


def check_scalar_totals(pairs: int = 100) -> list:
    grid = SpatialGrid.from_interval(-10.0, 10.0, 128)
    rng = np.random.default_rng(SEED + 1)
    m, e = 1.7, -0.6
    worst_m = worst_e = 0.0
    for _ in range(pairs):
        f, g = random_field(grid, rng), random_field(grid, rng)
        worst_m = max(worst_m, abs(total(density(ObservableSpec.mass(m), f, g)) - m))
        worst_e = max(worst_e, abs(total(density(ObservableSpec.charge(e), f, g)) - e))
    return [Assertion("total_mass", worst_m, 1e-12, "<"), Assertion("total_charge", worst_e, 1e-12, "<")]


def check_amplitude_constancy(steps: int = 1000) -> list:
    grid = SpatialGrid.from_interval(-20.0, 20.0, 256)
    dt = 0.005
    out = []
    for preset in ({"preset": "free"}, {"preset": "harmonic", "omega": 0.5}):
        pot = parse_potential(preset, grid)
        g = make_gaussian(grid, -2.0, 1.0, 1.5)
        f = make_gaussian(grid, 3.0, 1.3, -0.5, time=steps * dt)
        _, gi = evolve_interval(g, pot, steps * dt, dt, snapshot_every=50)
        _, fs = evolve_interval(f, pot, 0.0, dt, snapshot_every=50)
        fs = fs[::-1]
        amps = np.array([np.vdot(b.values, a.values) * grid.dx for a, b in zip(gi, fs)])
        out.append(Assertion(f"amplitude_constancy_{preset['preset']}",
                             float(np.max(np.abs(amps - amps[0]))), 1e-10, "<"))
    return out


def _pair_trajectories(grid, pot, dt, t_end, every):
    g = make_gaussian(grid, -1.0, 1.0, 2.0)
    f = make_gaussian(grid, 1.0, 1.2, 1.0, time=t_end)
    _, ti = evolve_interval(g, pot, t_end, dt, snapshot_every=every)
    _, tf = evolve_interval(f, pot, 0.0, dt, snapshot_every=every)
    return ti, tf[::-1]


def _continuity_residual(dt: float) -> float:
    grid = SpatialGrid.from_interval(-16.0, 16.0, 256)
    pot = parse_potential("free", grid)
    ti, tf = _pair_trajectories(grid, pot, dt, 0.4, 1)
    return noether_checks(ti, tf, pot)[0].max_abs


def check_continuity_order() -> list:
    coarse, fine = _continuity_residual(0.02), _continuity_residual(0.01)
    return [Assertion("continuity_halving_factor", coarse / fine, 3.5, ">=")]


def check_unitarity() -> list:
    grid = SpatialGrid.from_interval(-10.0, 10.0, 128)
    pot = parse_potential({"preset": "harmonic", "omega": 1.0}, grid)
    op = build_step(grid, pot.segments[0].values, 0.01)
    psi = make_gaussian(grid, 0.5, 1.0, 1.0)
    back = evolve_interval(evolve_interval(psi, pot, 1.0, 0.01), pot, 0.0, 0.01)
    return [Assertion("step_unitarity", op.unitarity_error(), 1e-12, "<"),
            Assertion("forward_backward_roundtrip", float(np.max(np.abs(back.values - psi.values))),
                      1e-12, "<")]


def check_energy_total() -> list:
    grid = SpatialGrid.from_interval(-10.0, 10.0, 128, boundary="hard-wall")
    x = grid.x
    v = 0.5 * x**2
    rng = np.random.default_rng(SEED + 2)
    f, g = random_field(grid, rng, smooth=20), random_field(grid, rng, smooth=20)
    obs = ObservableSpec.energy(v)
    d = density(obs, f, g)
    h = obs.operator_matrix(grid)
    want = np.vdot(f.values, h @ g.values) / np.vdot(f.values, g.values)
    return [Assertion("energy_total_matches_operator", abs(total(d) - want) / abs(want), 1e-12, "<")]


def check_field_equations() -> list:
    grid = SpatialGrid.from_interval(-16.0, 16.0, 256)
    pot = parse_potential("free", grid)
    res = []
    lag = []
    for dt in (0.02, 0.01):
        ti, tf = _pair_trajectories(grid, pot, dt, 0.4, 1)
        res.append(max(r.max_abs for r in field_equation_residuals(ti, tf, pot)))
        lag.append(abs(np.sum(lagrangian_density(tf, ti, pot)) * grid.dx))
    return [Assertion("schrodinger_residual_halving_factor", res[0] / res[1], 3.5, ">="),
            Assertion("lagrangian_on_shell_halving_factor", lag[0] / lag[1], 3.5, ">=")]


def check_fermion_total() -> list:
    grid = SpatialGrid.from_interval(-8.0, 8.0, 48)
    rng = np.random.default_rng(SEED + 3)
    ia, ib, fa, fb = (random_field(grid, rng, smooth=6) for _ in range(4))
    inp = TwoParticleDensityInput(antisymmetrize(ia, ib), antisymmetrize(fa, fb), ObservableSpec.mass())
    return [Assertion("fermion_total_mass", abs(total(density_identical(inp)) - 2.0), 1e-12, "<")]


INVARIANTS = (check_eigen_consistency, check_scalar_totals, check_amplitude_constancy,
              check_continuity_order, check_unitarity, check_energy_total, check_field_equations,
              check_fermion_total)


def invariant_suite() -> list:
    return [a for check in INVARIANTS for a in check()]


# ---------------------------------------------------------------------------
# Propagator oracles

def _prop_setup():
    grid = SpatialGrid.from_interval(-8.0, 8.0, 48)
    pot = parse_potential({"preset": "harmonic", "omega": 0.7}, grid)
    return grid, pot, 0.01


def check_propagator_identities() -> list:
    grid, pot, dt = _prop_setup()
    t1, t2, t3 = 0.0, 0.3, 0.7
    composed = retarded(grid, pot, t2, t3, dt=dt) @ retarded(grid, pot, t1, t2, dt=dt)
    direct = retarded(grid, pot, t1, t3, dt=dt)
    kr = direct.matrix
    ka = advanced(grid, pot, t1, t3, dt=dt).matrix
    same = retarded(grid, pot, t2, t2, dt=dt).matrix
    psi = make_gaussian(grid, 0.5, 1.0, 1.0)
    applied = direct.apply(psi).values
    stepped = evolve_interval(psi, pot, t3, dt).values
    return [
        Assertion("composition_bit_exact_mismatches",
                  float(np.count_nonzero(composed.matrix != direct.matrix)), 0.0, "<="),
        Assertion("advanced_retarded_identity", float(np.max(np.abs(np.conj(ka) + kr.T))), 1e-12, "<"),
        Assertion("equal_time_identity_mismatches",
                  float(np.count_nonzero(same != np.eye(grid.n_points))), 0.0, "<="),
        Assertion("apply_matches_stepper_mismatches", float(np.count_nonzero(applied != stepped)), 0.0, "<="),
        Assertion("unitarity", direct.unitarity_error(), 1e-12, "<"),
    ]


def check_line_breaking() -> list:
    grid, pot, dt = _prop_setup()
    t1, t2 = 0.0, 0.6
    psi_i = make_gaussian(grid, -1.0, 1.0, 1.0, time=t1)
    psi_f = make_gaussian(grid, 1.0, 1.1, -0.5, time=t2)
    worst = 0.0
    totals = []
    for k in (6, 18, 30, 42, 54):
        t = k * dt
        obs = ObservableSpec.momentum()
        broken = broken_line_density(obs, psi_f, psi_i, pot, t1, t, t2, dt=dt)
        wf = density(obs, evolve_interval(psi_f, pot, t, dt), evolve_interval(psi_i, pot, t, dt))
        worst = max(worst, _rel(broken.values, wf.values))
        totals.append(total(broken_line_density(ObservableSpec.mass(), psi_f, psi_i, pot, t1, t, t2, dt=dt)))
    spread = float(max(abs(a - totals[0]) for a in totals))
    return [Assertion("broken_line_vs_wavefunction", worst, 1e-9, "<"),
            Assertion("scalar_total_break_time_spread", spread, 1e-10, "<")]


def _fermion_setup():
    grid, pot, dt = _prop_setup()
    t1, t, t2 = 0.0, 0.2, 0.4
    ia = make_gaussian(grid, -2.0, 0.9, 1.0, time=t1)
    ib = make_gaussian(grid, 1.5, 1.1, -0.5, time=t1)
    fa = make_gaussian(grid, -1.0, 1.2, 0.3, time=t2)
    fb = make_gaussian(grid, 2.0, 1.0, 0.0, time=t2)
    return grid, pot, dt, (t1, t, t2), (ia, ib, fa, fb)


def random_hermitian(n: int, rng) -> np.ndarray:
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (a + a.conj().T)


def check_appendix() -> list:
    grid, pot, dt, (t1, t, t2), (ia, ib, fa, fb) = _fermion_setup()
    rng = np.random.default_rng(SEED + 4)
    psi_i2 = antisymmetrize(ia, ib)
    psi_f2 = antisymmetrize(fa, fb)
    gi = evolve_many_body(psi_i2, pot, t, dt)
    gf = evolve_many_body(psi_f2, pot, t, dt)
    out = []
    for label, obs in (("mass", ObservableSpec.mass()), ("momentum", ObservableSpec.momentum()),
                       ("hermitian", ObservableSpec.custom(random_hermitian(grid.n_points, rng)))):
        lines = appendix_density(obs, ia, ib, fa, fb, pot, t1, t, t2, dt=dt)
        wave = density_identical(TwoParticleDensityInput(gi, gf, obs))
        out.append(Assertion(f"appendix_density_{label}", _rel(lines.values, wave.values), 1e-8, "<"))
    amp = appendix_amplitude(ia, ib, fa, fb, pot, t1, t2, dt=dt)
    gi_end = evolve_many_body(psi_i2, pot, t2, dt)
    direct = np.vdot(psi_f2.values, gi_end.values) * grid.dx**2
    out.append(Assertion("appendix_amplitude", abs(amp - direct), 1e-10, "<"))
    rep = substitution_check(ObservableSpec.momentum(), {"ia": ia, "ib": ib, "fa": fa, "fb": fb},
                             pot, (t1, t, t2), dt=dt)
    out.append(Assertion("line_substitution_terms", rep.max_relative_deviation, 1e-9, "<"))
    out.append(Assertion("line_substitution_bookkeeping", rep.identity_bookkeeping, 1e-9, "<"))
    return out


PROPAGATOR_CHECKS = (check_propagator_identities, check_line_breaking, check_appendix)


def propagator_suite() -> list:
    return [a for check in PROPAGATOR_CHECKS for a in check()]
