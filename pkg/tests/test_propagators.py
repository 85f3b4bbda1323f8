import numpy as np
import pytest

from biwave.densities import ObservableSpec, density, total
from biwave.errors import AmplitudeNearZero, GridMismatch, TimeOrderViolation
from biwave.evolution import build_step, evolve_interval, parse_potential, step_backward
from biwave.fields import SpatialGrid, make_gaussian, make_plane_wave, many_body_inner_product
from biwave.multibody import TwoParticleDensityInput, antisymmetrize, density_identical, evolve_many_body
from biwave.propagators import (
    CONVENTION,
    advanced,
    appendix_amplitude,
    appendix_density,
    appendix_terms,
    backward_row,
    broken_line_density,
    export_propagator,
    load_propagator_matrix,
    retarded,
    substitution_check,
)

DT = 0.01


@pytest.fixture
def grid():
    return SpatialGrid.from_interval(-8.0, 8.0, 64)


@pytest.fixture
def barrier(grid):
    return parse_potential({"preset": "barrier", "height": 2.0, "center": 0.5, "width": 1.0}, grid)


@pytest.fixture
def free(grid):
    return parse_potential("free", grid)


def fermion_states(grid, t1, t2, spread=1.0):
    ia = make_gaussian(grid, -1.5 * spread, 1.0, wavenumber=0.6, time=t1)
    ib = make_gaussian(grid, 1.0 * spread, 0.9, wavenumber=-0.3, time=t1)
    fa = make_gaussian(grid, -1.0 * spread, 1.1, time=t2)
    fb = make_gaussian(grid, 1.5 * spread, 1.0, wavenumber=0.2, time=t2)
    return ia, ib, fa, fb


class TestRetarded:
    def test_equal_times_identity(self, grid, barrier):
        p = retarded(grid, barrier, 0.3, 0.3, dt=DT)
        assert np.array_equal(p.matrix, np.eye(64))

    def test_composition_bit_exact(self, grid, barrier):
        p31 = retarded(grid, barrier, 0.0, 0.5, dt=DT)
        composed = retarded(grid, barrier, 0.2, 0.5, dt=DT) @ retarded(grid, barrier, 0.0, 0.2, dt=DT)
        assert np.array_equal(composed.matrix, p31.matrix)

    def test_composition_across_potential_switch(self, grid):
        pot = parse_potential({"preset": "sg_gradient", "gradient": 1.0, "t_on": 0.1, "t_off": 0.3}, grid)
        whole = retarded(grid, pot, 0.0, 0.5, dt=DT, channel=0)
        for split in (0.05, 0.1, 0.25, 0.3, 0.45):
            parts = retarded(grid, pot, split, 0.5, dt=DT, channel=0) @ retarded(grid, pot, 0.0, split, dt=DT, channel=0)
            assert np.array_equal(parts.matrix, whole.matrix)

    def test_matches_evolution(self, grid, barrier):
        g = make_gaussian(grid, -2.0, 1.0, wavenumber=1.0)
        p = retarded(grid, barrier, 0.0, 0.6, dt=DT)
        want = evolve_interval(g, barrier, 0.6, DT).values
        assert np.max(np.abs(p.matrix @ g.values - want)) < 1e-12
        assert np.array_equal(p.apply(g).values, want)

    def test_unitary(self, grid, barrier):
        assert retarded(grid, barrier, 0.0, 1.0, dt=DT).unitarity_error() < 1e-9

    def test_time_order(self, grid, free):
        with pytest.raises(TimeOrderViolation):
            retarded(grid, free, 1.0, 0.5, dt=DT)

    def test_compose_mismatched_times(self, grid, free):
        with pytest.raises(TimeOrderViolation):
            retarded(grid, free, 0.5, 0.6, dt=DT) @ retarded(grid, free, 0.0, 0.2, dt=DT)

    def test_compose_grid_mismatch(self, grid, line):
        a = retarded(grid, parse_potential("free", grid), 0.0, 0.1, dt=DT)
        b = retarded(line, parse_potential("free", line), 0.1, 0.2, dt=DT)
        with pytest.raises(GridMismatch):
            b @ a

    def test_convention_recorded(self, grid, free):
        assert retarded(grid, free, 0.0, 0.1, dt=DT).to_json()["convention"] == CONVENTION


class TestAdvanced:
    def test_free_identity(self, grid, free):
        kr = retarded(grid, free, 0.0, 0.5, dt=DT).matrix
        ka = advanced(grid, free, 0.0, 0.5, dt=DT).matrix
        assert np.max(np.abs(np.conj(ka) + kr.T)) < 1e-12

    def test_equal_times(self, grid, free):
        ka = advanced(grid, free, 0.4, 0.4, dt=DT)
        assert np.array_equal(-ka.matrix, np.eye(64))
        g = make_gaussian(grid, 0.0, 1.0, time=0.4)
        assert np.array_equal(ka.apply(g).values, g.values)

    def test_backward_row_matches_stepper(self, grid, barrier):
        f = make_gaussian(grid, 1.0, 1.0, wavenumber=-0.5, time=0.5)
        row = backward_row(f, retarded(grid, barrier, 0.2, 0.5, dt=DT))
        op = build_step(grid, barrier.segments[0].values, DT)
        psi = f
        for _ in range(30):
            psi = step_backward(psi, op)
        assert np.max(np.abs(np.conj(row) - psi.values)) < 1e-12
        ka = advanced(grid, barrier, 0.2, 0.5, dt=DT).matrix
        assert np.max(np.abs(-ka @ f.values - psi.values)) < 1e-12

    def test_time_order(self, grid, free):
        with pytest.raises(TimeOrderViolation):
            advanced(grid, free, 0.5, 0.1, dt=DT)

    def test_no_composition(self, grid, free):
        a = advanced(grid, free, 0.0, 0.1, dt=DT)
        with pytest.raises(TypeError):
            a @ a


class TestBrokenLine:
    def test_matches_wavefunction_route(self, grid, barrier):
        t1, t2 = 0.0, 0.8
        gi = make_gaussian(grid, -2.0, 1.0, wavenumber=1.2, time=t1)
        gf = make_gaussian(grid, 1.0, 1.3, wavenumber=0.4, time=t2)
        for t in (0.1, 0.4, 0.7):
            for obs in (ObservableSpec.mass(), ObservableSpec.momentum(), ObservableSpec.energy(barrier.segments[0].values)):
                d = broken_line_density(obs, gf, gi, barrier, t1, t, t2, dt=DT)
                want = density(obs, evolve_interval(gf, barrier, t, DT), evolve_interval(gi, barrier, t, DT))
                scale = np.max(np.abs(want.values))
                assert np.max(np.abs(d.values - want.values)) < 1e-10 * max(1.0, scale)

    def test_mass_total(self, grid, barrier):
        gi = make_gaussian(grid, -2.0, 1.0, wavenumber=1.2, time=0.0)
        gf = make_gaussian(grid, 1.0, 1.3, time=0.8)
        d = broken_line_density(ObservableSpec.mass(2.5), gf, gi, barrier, 0.0, 0.3, 0.8, dt=DT)
        assert abs(total(d) - 2.5) < 1e-10

    def test_break_at_start(self, grid, barrier):
        gi = make_gaussian(grid, -2.0, 1.0, wavenumber=1.2, time=0.0)
        gf = make_gaussian(grid, 1.0, 1.3, time=0.8)
        obs = ObservableSpec.mass()
        d = broken_line_density(obs, gf, gi, barrier, 0.0, 0.0, 0.8, dt=DT)
        direct = density(obs, evolve_interval(gf, barrier, 0.0, DT), gi)
        assert np.max(np.abs(d.values - direct.values)) < 1e-10
        near = broken_line_density(obs, gf, gi, barrier, 0.0, DT, 0.8, dt=DT)
        assert np.max(np.abs(near.values - d.values)) < 10 * DT * np.max(np.abs(d.values))

    def test_momentum_break_invariance(self, grid, free):
        gi = make_gaussian(grid, -1.0, 1.0, wavenumber=0.8, time=0.0)
        gf = make_gaussian(grid, 0.5, 1.2, wavenumber=0.3, time=1.0)
        totals = [total(broken_line_density(ObservableSpec.momentum(), gf, gi, free, 0.0, t, 1.0, dt=DT))
                  for t in (0.1, 0.3, 0.5, 0.7, 0.9)]
        assert max(abs(v - totals[0]) for v in totals) < 1e-9

    def test_order_checked(self, grid, free):
        gi = make_gaussian(grid, 0.0, 1.0, time=0.0)
        gf = make_gaussian(grid, 0.0, 1.0, time=1.0)
        with pytest.raises(TimeOrderViolation):
            broken_line_density(ObservableSpec.mass(), gf, gi, free, 0.0, 1.5, 1.0, dt=DT)
        with pytest.raises(TimeOrderViolation):
            broken_line_density(ObservableSpec.mass(), gf, gi, free, 0.0, 0.5, 0.9, dt=DT)


class TestAppendix:
    def test_density_matches_two_particle_route(self, grid, barrier):
        t1, t, t2 = 0.0, 0.3, 0.6
        ia, ib, fa, fb = fermion_states(grid, t1, t2)
        psi_i2 = evolve_many_body(antisymmetrize(ia, ib), barrier, t, DT)
        psi_f2 = evolve_many_body(antisymmetrize(fa, fb), barrier, t, DT)
        for obs in (ObservableSpec.mass(), ObservableSpec.momentum()):
            want = density_identical(TwoParticleDensityInput(psi_i2, psi_f2, obs)).values
            got = appendix_density(obs, ia, ib, fa, fb, barrier, t1, t, t2, dt=DT).values
            assert np.max(np.abs(got - want)) < 1e-8 * np.max(np.abs(want))

    def test_amplitude_matches_two_particle_overlap(self, grid, barrier):
        ia, ib, fa, fb = fermion_states(grid, 0.0, 0.6)
        psi_i2 = evolve_many_body(antisymmetrize(ia, ib), barrier, 0.6, DT)
        want = many_body_inner_product(antisymmetrize(fa, fb), psi_i2)
        assert abs(appendix_amplitude(ia, ib, fa, fb, barrier, 0.0, 0.6, dt=DT) - want) < 1e-10

    def test_amplitude_identity_case(self, ring):
        a, b = make_plane_wave(ring, 1), make_plane_wave(ring, -2)
        amp = appendix_amplitude(a, b, a, b, parse_potential("free", ring), 0.0, 0.0, dt=DT)
        assert abs(amp - 1.0) < 1e-12

    def test_swap_flips_amplitude_sign(self, grid, barrier):
        ia, ib, fa, fb = fermion_states(grid, 0.0, 0.6)
        a = appendix_amplitude(ia, ib, fa, fb, barrier, 0.0, 0.6, dt=DT)
        assert appendix_amplitude(ia, ib, fb, fa, barrier, 0.0, 0.6, dt=DT) == -a

    def test_relabel_invariance(self, grid, barrier):
        ia, ib, fa, fb = fermion_states(grid, 0.0, 0.6)
        obs = ObservableSpec.momentum()
        d = appendix_density(obs, ia, ib, fa, fb, barrier, 0.0, 0.3, 0.6, dt=DT).values
        relabelled = appendix_density(obs, ib, ia, fb, fa, barrier, 0.0, 0.3, 0.6, dt=DT).values
        assert np.max(np.abs(d - relabelled)) < 1e-12 * np.max(np.abs(d))
        a = appendix_amplitude(ia, ib, fa, fb, barrier, 0.0, 0.6, dt=DT)
        assert abs(appendix_amplitude(ib, ia, fa, fb, barrier, 0.0, 0.6, dt=DT) + a) < 1e-12 * abs(a)

    def test_mass_total(self, grid, barrier):
        ia, ib, fa, fb = fermion_states(grid, 0.0, 0.6)
        d = appendix_density(ObservableSpec.mass(1.5), ia, ib, fa, fb, barrier, 0.0, 0.3, 0.6, dt=DT)
        assert abs(total(d) - 3.0) < 1e-10

    def test_exchange_suppressed_without_overlap(self):
        grid = SpatialGrid.from_interval(-20.0, 20.0, 128)
        free = parse_potential("free", grid)
        ia, ib, fa, fb = fermion_states(grid, 0.0, 0.3, spread=6.0)
        terms, _, _ = appendix_terms(ObservableSpec.mass(), ia, ib, fa, fb, free, 0.0, 0.1, 0.3, dt=DT)
        direct = max(np.max(np.abs(v)) for (d, _), v in terms.items() if d == 0)
        exchange = max(np.max(np.abs(v)) for (d, _), v in terms.items() if d == 1)
        assert exchange < 1e-10 * direct

    def test_amplitude_floor(self, ring):
        a, b, c = make_plane_wave(ring, 1), make_plane_wave(ring, 2), make_plane_wave(ring, 3)
        with pytest.raises(AmplitudeNearZero):
            appendix_density(ObservableSpec.mass(), a, b, a, c, parse_potential("free", ring), 0.0, 0.0, 0.0, dt=DT)

    def test_boundary_times_checked(self, grid, free):
        ia, ib, fa, fb = fermion_states(grid, 0.0, 0.6)
        with pytest.raises(TimeOrderViolation):
            appendix_density(ObservableSpec.mass(), ia, ib, fa, fb, free, 0.0, 0.3, 0.5, dt=DT)


class TestSubstitution:
    def test_single_line(self, grid, barrier):
        gi = make_gaussian(grid, -2.0, 1.0, wavenumber=1.2, time=0.0)
        gf = make_gaussian(grid, 1.0, 1.3, time=0.6)
        rep = substitution_check(ObservableSpec.momentum(), {"i": gi, "f": gf}, barrier, (0.0, 0.3, 0.6), dt=DT)
        assert rep.passed and rep.broken_lines == 1

    def test_fermion_pair(self):
        grid = SpatialGrid.from_interval(-6.0, 6.0, 32)
        pot = parse_potential({"preset": "harmonic", "omega": 0.7}, grid)
        ia, ib, fa, fb = fermion_states(grid, 0.0, 0.4)
        rep = substitution_check(ObservableSpec.energy(pot.segments[0].values),
                                 {"ia": ia, "ib": ib, "fa": fa, "fb": fb}, pot, (0.0, 0.2, 0.4), dt=DT)
        assert rep.passed
        assert rep.max_relative_deviation < 1e-9 and len(rep.term_deviation) == 4
        assert rep.identity_bookkeeping < 1e-12

    def test_bad_keys(self, grid, free):
        with pytest.raises(ValueError):
            substitution_check(ObservableSpec.mass(), {"x": make_gaussian(grid, 0, 1)}, free, (0, 0, 0), dt=DT)


def test_export_round_trip(tmp_path, grid, barrier):
    p = retarded(grid, barrier, 0.0, 0.2, dt=DT)
    bin_path, _ = export_propagator(p, tmp_path / "k")
    assert bin_path.stat().st_size == 64 * 64 * 16
    mat, meta = load_propagator_matrix(tmp_path / "k")
    assert np.array_equal(mat, p.matrix)
    assert meta["convention"] == CONVENTION and meta["t_to"] == 0.2
