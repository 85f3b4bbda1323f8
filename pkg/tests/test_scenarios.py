import copy
import json
import math

import numpy as np
import pytest

from biwave.config import ScenarioConfig, build_state, default_config, load_config
from biwave.errors import ConfigError
from biwave.evolution import evolve_interval, parse_potential
from biwave.fields import SpatialGrid, make_gaussian
from biwave.report import read_table, read_trace
from biwave.scenarios import (
    NO_HISTORY,
    centroid,
    density_jump,
    rederive,
    run_scenario,
    support_width,
    write_report,
)

NAMES = ("two_position", "slit", "double_slit", "stern_gerlach", "momentum_consistency", "triple_measurement")


@pytest.fixture(scope="module")
def reference():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = run_scenario(default_config(name))
        return cache[name]
    return get


def variant(name, **changes):
    cfg = default_config(name)
    for key, value in changes.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    return cfg


def small_two_position(**changes):
    sigma = 0.3
    n_steps = 400
    dt = 2 * math.sqrt(8.0) * sigma**2 / n_steps
    cfg = {
        "schema": 1, "name": "two_position",
        "grid": {"n_points": 256, "x_min": -12.8, "x_max": 12.8},
        "time": {"t1": 0.0, "dt": dt, "n_steps": n_steps},
        "states": {"psi_i": {"kind": "narrow_peak", "center": 0.0},
                   "psi_f": {"kind": "narrow_peak", "center": 0.0}},
        "snapshot_times": [k * dt for k in [0, 1] + list(range(40, 400, 40)) + [399, 400]],
    }
    cfg.update(changes)
    return cfg


class TestReferenceRuns:
    @pytest.mark.parametrize("name", NAMES)
    def test_passes(self, reference, name):
        rep = reference(name)
        assert rep.passed, [a.line() for a in rep.assertions if not a.passed]

    @pytest.mark.parametrize("name", NAMES)
    def test_assertions_unique(self, reference, name):
        names = [a.name for a in reference(name).assertions]
        assert len(names) == len(set(names)) and names

    @pytest.mark.parametrize("name", NAMES)
    def test_amplitude_constant(self, reference, name):
        runs = {}
        for run, _, a, _ in reference(name).amplitude_trace:
            runs.setdefault(run, []).append(a)
        for amps in runs.values():
            assert max(abs(a - amps[0]) for a in amps) < 1e-10

    def test_report_rejects_duplicate(self, reference):
        rep = copy.deepcopy(reference("triple_measurement"))
        with pytest.raises(ValueError):
            rep.add(rep.assertions[0].name, 0.0, 1.0, "<")


class TestTwoPosition:
    def test_expand_contract(self, reference):
        rep = reference("two_position")
        widths = rep.diagnostics["widths"]
        k_mid = int(np.argmax(widths))
        times = ScenarioConfig.from_json(default_config("two_position")).snapshot_times
        assert abs(times[k_mid] - 0.5 * times[-1]) <= 0.1 * times[-1]
        assert widths[1] < widths[k_mid] > widths[-2]
        assert rep.assertion("width_ratio_start").measured > 2.0
        assert rep.assertion("time_symmetry").measured < 0.05

    def test_displaced_anchor_tilts(self):
        cfg = variant("two_position", states={"psi_i": {"kind": "narrow_peak", "center": 0.0},
                                              "psi_f": {"kind": "narrow_peak", "center": 2.0}})
        rep = run_scenario(cfg)
        assert "time_symmetry" not in [a.name for a in rep.assertions]
        assert rep.assertion("centroid_monotonic").passed
        cents = rep.diagnostics["centroids"]
        assert abs(cents[0]) < 0.1 and abs(cents[-1] - 2.0) < 0.1

    def test_single_instant(self):
        cfg = small_two_position(time={"t1": 0.0, "dt": 0.01, "n_steps": 0}, snapshot_times=[0.0])
        rep = run_scenario(cfg)
        assert rep.passed and rep.assertion("width_constant").measured == 0.0

    def test_disconnected_peaks_flagged(self):
        cfg = small_two_position(states={"psi_i": {"kind": "narrow_peak", "center": -8.0},
                                         "psi_f": {"kind": "narrow_peak", "center": 8.0}},
                                 time={"t1": 0.0, "dt": 0.001, "n_steps": 10},
                                 snapshot_times=[0.0, 0.001, 0.005, 0.009, 0.01])
        rep = run_scenario(cfg)
        assert any(NO_HISTORY in f for f in rep.flags)
        assert not rep.passed
        assert "mass" not in rep.tables

    def test_width_metric(self):
        x = np.linspace(-10, 10, 2001)
        rho = np.exp(-x**2 / (2 * 1.5**2))
        assert support_width(x, rho) == pytest.approx(1.5, rel=1e-6)
        assert centroid(x, np.roll(rho, 100)) == pytest.approx(1.0, abs=1e-6)


class TestSlit:
    def test_reference_metrics(self, reference):
        rep = reference("slit")
        assert rep.assertion("outside_slit_ratio").measured < 1e-6
        assert rep.assertion("psi_f_in_slit_before_barrier").measured > 0.9
        # backward-evolved psi_f spreads out beyond the barrier
        assert rep.diagnostics["psi_f_spread_ratio"] > 1.0

    def test_open_mask_is_free_run(self):
        base = small_two_position(states={"psi_i": {"kind": "gaussian", "center": 0.0, "width": 0.8},
                                          "psi_f": {"kind": "gaussian", "center": 1.0, "width": 0.8}})
        dt = base["time"]["dt"]
        slit = dict(base, name="slit", masks=[{"time": 200 * dt, "open": True}])
        slit["snapshot_times"] = sorted(set(base["snapshot_times"]) | {199 * dt, 200 * dt})
        base["snapshot_times"] = slit["snapshot_times"]
        a, b = run_scenario(base), run_scenario(slit)
        for (ta, va), (tb, vb) in zip(a.tables["mass"], b.tables["mass"]):
            assert ta == tb and np.max(np.abs(va - vb)) < 1e-12

    def test_closed_mask_flagged(self):
        cfg = variant("slit", masks=[{"time": 1.0, "open": False}])
        rep = run_scenario(cfg)
        assert any(NO_HISTORY in f for f in rep.flags) and not rep.passed

    def test_amplitude_constant_across_mask(self, reference):
        amps = [a for _, _, a, _ in reference("slit").amplitude_trace]
        assert abs(amps[0]) < 1.0   # the slit cut the overlap
        assert max(abs(a - amps[0]) for a in amps) < 1e-10

    def test_needs_barrier_snapshots(self):
        cfg = variant("slit", snapshot_times=[0.0, 2.0])
        with pytest.raises(ConfigError):
            run_scenario(cfg)

    def test_needs_a_mask(self):
        cfg = variant("slit", masks=[])
        with pytest.raises(ConfigError):
            run_scenario(cfg)


class TestDoubleSlit:
    def test_reference(self, reference):
        rep = reference("double_slit")
        assert rep.assertion("closed_corridor_ratio").measured < 0.05
        assert rep.assertion("corridor_symmetry").measured < 0.02
        two, one = rep.diagnostics["corridor_two_slit"], rep.diagnostics["corridor_one_slit"]
        assert one[1] < 0.05 * two[1] and one[0] > 0

    def test_other_slit_closed(self):
        rep = run_scenario(variant("double_slit", params={"closed_slit": 0}))
        assert rep.passed

    def test_both_closed_flagged(self):
        rep = run_scenario(variant("double_slit", params={"open": [False, False]}))
        assert any(NO_HISTORY in f for f in rep.flags) and not rep.passed

    def test_asymmetric_setup_skips_symmetry(self):
        states = {"psi_i": {"kind": "gaussian", "center": 0.5, "width": 0.5},
                  "psi_f": {"kind": "gaussian", "center": 0.0, "width": 0.5}}
        rep = run_scenario(variant("double_slit", states=states))
        assert "corridor_symmetry" not in [a.name for a in rep.assertions]


class TestSternGerlach:
    def test_reference(self, reference):
        rep = reference("stern_gerlach")
        assert rep.assertion("unmatched_branch_fraction").measured < 1e-8
        assert rep.assertion("branch_separation_sigmas").measured >= 6.0
        assert rep.assertion("pre_measurement_density").passed
        assert rep.diagnostics["spin_blind_unmatched_fraction"] < 1e-8

    def test_branches_follow_opposite_forces(self, reference):
        plus, minus = reference("stern_gerlach").diagnostics["branch_centroids"]
        assert plus * minus < 0

    def test_no_magnet(self):
        cfg = variant("stern_gerlach", potential={"gradient": 0.0})
        rep = run_scenario(cfg)
        assert rep.assertion("branch_separation_sigmas").measured < 1e-6
        assert not rep.assertion("branch_separation_sigmas").passed
        for (_, a), (_, b) in zip(rep.tables["psi_i_plus"], rep.tables["psi_i_minus"]):
            assert np.array_equal(a, b)

    def test_mirror_outcome(self, reference):
        rep = run_scenario(variant("stern_gerlach", params={"outcome": "-"}))
        assert rep.passed
        ref = reference("stern_gerlach")
        # x -> -x maps node j to node (n - j) mod n on this grid
        for (_, a), (_, b) in zip(ref.tables["mass_plus"], rep.tables["mass_minus"]):
            mirrored = np.roll(b[::-1], 1)
            assert np.max(np.abs(a - mirrored)) < 1e-8 * np.max(np.abs(a))

    def test_bad_outcome(self):
        with pytest.raises(ConfigError):
            run_scenario(variant("stern_gerlach", params={"outcome": "sideways"}))


class TestMomentum:
    def test_counts(self, reference):
        rep = reference("momentum_consistency")
        assert rep.diagnostics["cases"] == 2 * 11 * 21
        assert rep.diagnostics["excluded"] == 22
        assert rep.assertion("eigenvalue_error_initial").measured < 1e-8
        assert rep.assertion("eigenvalue_error_final").measured < 1e-8

    def test_table_totals(self, reference):
        rep = reference("momentum_consistency")
        dx = 2 * math.pi / 256
        (_, v), = rep.tables["momentum_final_m-2_d00"]
        assert abs(np.sum(v) * dx + 2.0) < 1e-8
        (_, v), = rep.tables["momentum_initial_m+3_d07"]
        assert abs(np.sum(v) * dx - 3.0) < 1e-8

    def test_needs_periodic_grid(self):
        cfg = variant("momentum_consistency", grid={"boundary": "hard-wall"})
        with pytest.raises(ConfigError):
            run_scenario(cfg)


class TestTripleMeasurement:
    def test_distinct_states_jump(self, reference):
        rep = reference("triple_measurement")
        (_, before), = rep.tables["mass_before"]
        (_, after), = rep.tables["mass_after"]
        dx = 25.6 / 256
        want = math.sqrt(np.sum(np.abs(after - before) ** 2) * dx)
        assert rep.diagnostics["jump_l2"] == pytest.approx(want, rel=1e-12)
        assert rep.diagnostics["jump_l2"] > 0.1

    def test_equal_states_no_jump(self):
        # a plane wave only picks up a phase, so all three anchors describe one history
        pw = {"kind": "plane_wave", "mode": 2}
        rep = run_scenario(variant("triple_measurement", states={"psi_1": pw, "psi_2": pw, "psi_3": pw}))
        assert rep.diagnostics["jump_l2"] < 1e-12

    def test_jump_matches_direct_evaluation(self, reference):
        rep = reference("triple_measurement")
        grid = SpatialGrid.from_interval(-12.8, 12.8, 256)
        pot = parse_potential("free", grid)
        s1 = make_gaussian(grid, -1.0, 1.0, wavenumber=1.0)
        s2 = make_gaussian(grid, 0.0, 0.8, time=1.0)
        s3 = make_gaussian(grid, 1.5, 1.2, wavenumber=-0.5, time=2.0)
        fwd1 = evolve_interval(s1, pot, 1.0, 0.01)
        bwd2 = evolve_interval(s3, pot, 1.0, 0.01)
        before = np.conj(s2.values) * fwd1.values / (np.vdot(s2.values, fwd1.values) * grid.dx)
        after = np.conj(bwd2.values) * s2.values / (np.vdot(bwd2.values, s2.values) * grid.dx)
        assert rep.diagnostics["jump_l2"] == pytest.approx(density_jump(before, after, grid.dx), rel=1e-9)

    def test_jump_zero_for_identical_fields(self):
        v = np.exp(-np.linspace(-3, 3, 50) ** 2)
        assert density_jump(v, v, 0.1) == 0.0

    def test_measure_time_inside(self):
        with pytest.raises(ConfigError):
            run_scenario(variant("triple_measurement", params={"t_measure": 0.0}))


class TestOutput:
    def test_deterministic_bytes(self, tmp_path):
        cfg = small_two_position()
        for d in ("a", "b"):
            write_report(run_scenario(cfg), tmp_path / d)
        for f in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_layout(self, tmp_path, reference):
        out = write_report(reference("slit"), tmp_path)
        meta = json.loads((out / "report.json").read_text())
        assert meta["schema"] == 1 and meta["scenario"] == "slit" and meta["passed"]
        for q in meta["quantities"]:
            with open(out / f"{q}.csv") as fh:
                assert fh.readline().strip() == "t,x,re,im"
        with open(out / "amplitude_trace.csv") as fh:
            assert fh.readline().strip() == "run,t,re,im,floor"

    def test_csv_round_trip_exact(self, tmp_path, reference):
        rep = reference("triple_measurement")
        write_report(rep, tmp_path)
        rows = read_table(tmp_path / "mass.csv")
        for t, values in rep.tables["mass"]:
            xs, vs = rows[t]
            assert np.array_equal(vs, values) and np.array_equal(xs, rep.x)
        assert [a for _, _, a, _ in read_trace(tmp_path / "amplitude_trace.csv")] == \
            [a for _, _, a, _ in rep.amplitude_trace]

    @pytest.mark.parametrize("name", NAMES)
    def test_rederive(self, tmp_path, reference, name):
        write_report(reference(name), tmp_path)
        for key, (recomputed, reported) in rederive(tmp_path).items():
            if reported is None:
                assert not math.isfinite(recomputed), key
            else:
                assert recomputed == reported, key

    def test_units_scale_output(self, tmp_path):
        cfg = small_two_position(units={"length": 2.0, "time": 10.0})
        rep = run_scenario(cfg)
        write_report(rep, tmp_path)
        rows = read_table(tmp_path / "mass.csv")
        t_last = max(rows)
        assert t_last == pytest.approx(10.0 * rep.tables["mass"][-1][0])
        assert np.allclose(rows[t_last][0], 2.0 * rep.x)
        for _, (recomputed, reported) in rederive(tmp_path).items():
            assert recomputed == pytest.approx(reported, rel=1e-12)

    def test_real_part_only(self, tmp_path, reference):
        write_report(reference("triple_measurement"), tmp_path, real_part=True)
        with open(tmp_path / "mass.csv") as fh:
            assert fh.readline().strip() == "t,x,re"
        with pytest.raises(ConfigError):
            rederive(tmp_path)


class TestConfig:
    def test_round_trip(self):
        cfg = ScenarioConfig.from_json(default_config("slit"))
        again = ScenarioConfig.from_json(cfg.to_json())
        assert again.snapshot_times == cfg.snapshot_times and again.masks == cfg.masks

    def test_load(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(default_config("stern_gerlach")))
        assert load_config(path).name == "stern_gerlach"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_t2_instead_of_n_steps(self):
        cfg = small_two_position(time={"t1": 0.0, "dt": 0.01, "t2": 0.5}, snapshot_count=6)
        del cfg["snapshot_times"]
        parsed = ScenarioConfig.from_json(cfg)
        assert parsed.n_steps == 50 and len(parsed.snapshot_times) == 6

    @pytest.mark.parametrize("change", [
        {"schema": 2},
        {"schema": None},
        {"name": "teleport"},
        {"grid": {"n_points": 4}},
        {"time": {"t1": 0.0, "dt": -1.0, "n_steps": 4}},
        {"time": {"t1": 0.0, "dt": 0.01}},
        {"time": {"t1": 1.0, "dt": 0.01, "t2": 0.5}},
        {"time": {"t1": 0.0, "dt": 0.01, "t2": 0.505}},
        {"snapshot_times": []},
        {"snapshot_times": [0.02, 0.01]},
        {"snapshot_times": [0.0, 0.0]},
        {"snapshot_times": [0.015]},
        {"snapshot_times": [100.0]},
        {"units": {"length": 0.0}},
    ])
    def test_validation(self, change):
        cfg = small_two_position()
        cfg.update(change)
        if "schema" in change and change["schema"] is None:
            del cfg["schema"]
        with pytest.raises(ConfigError):
            ScenarioConfig.from_json(cfg)

    def test_not_an_object(self):
        with pytest.raises(ConfigError):
            ScenarioConfig.from_json([1, 2])

    def test_unknown_default(self):
        with pytest.raises(ConfigError):
            default_config("teleport")

    def test_state_kinds(self, line):
        assert build_state({"kind": "plane_wave", "mode": 1}, SpatialGrid.from_interval(0, 6.28, 64), 0.0)
        a = build_state({"kind": "random", "seed": 3, "smooth": 8}, line, 0.0)
        b = build_state({"kind": "random", "seed": 3, "smooth": 8}, line, 0.0)
        assert np.array_equal(a.values, b.values)
        with pytest.raises(ConfigError):
            build_state({"kind": "cat"}, line, 0.0)
