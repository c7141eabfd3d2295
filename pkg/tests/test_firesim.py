import math

import numpy as np
import pytest

from firecampaign import fds_formats as ff
from firecampaign import firesim as fs

MODEL = fs.BuildingModel.default()
COARSE = MODEL.coarsened(2.0)


def test_default_building_loads():
    assert (MODEL.nx, MODEL.ny, MODEL.n_floors) == (100, 30, 5)
    assert MODEL.floor_labels == ("L4", "L5", "L6", "L7", "L8")
    g = MODEL.grid
    assert g.mask.shape == (5, 30, 100)
    assert (~g.mask[0]).sum() == 2 * 3 * 4  # two 3 m x 4 m pillars
    assert len(g.lower) == len(g.upper) == 4 * 64
    assert len(g.vent_cells) == 3


def test_hrr_t_squared():
    sc = fs.FireScenario(10, 10, 0)
    assert [fs.hrr_at(t, sc) for t in (0.0, 75.0, 150.0, 1800.0)] == [0.0, 0.25e6, 1.0e6, 1.0e6]
    assert fs.hrr_at(30.0, sc) == pytest.approx(1e6 * (30 / 150) ** 2, rel=1e-15)


def test_validate_fire_location():
    assert fs.validate_fire_location(MODEL, 50, 5, 2) is None
    assert fs.validate_fire_location(MODEL, 0.5, 5, 2).startswith("wall clearance")
    assert fs.validate_fire_location(MODEL, 97.5, 5, 2).startswith("wall clearance")
    assert fs.validate_fire_location(MODEL, 31, 13, 0).startswith("pillar clearance")
    assert fs.validate_fire_location(MODEL, 27.5, 13, 0).startswith("pillar clearance")
    assert fs.validate_fire_location(MODEL, 27, 13, 0) is None  # patch edge touches the buffer
    assert "floor" in fs.validate_fire_location(MODEL, 50, 5, 5)


def test_source_weights_sum_to_one():
    for x, y in [(10.0, 10.0), (10.3, 7.7), (50.5, 20.25)]:
        for m in (MODEL, COARSE):
            w = fs.fire_source_weights(m, fs.FireScenario(x, y, 1))
            assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_stable_dt_and_rejection():
    assert MODEL.stable_dt() == pytest.approx(0.5)  # diffusion limit h^2 / 4D
    assert COARSE.stable_dt() == pytest.approx(1 / 1.2)  # exchange limit 1 / (2 ex + bias)
    assert fs.BuildingModel(cell=2.0, openings=()).stable_dt() == pytest.approx(2.0)
    with pytest.raises(fs.UnstableTimestep):
        fs.check_timestep(MODEL, 0.9)
    with pytest.raises(fs.UnstableTimestep):
        fs.step(fs.initial_state(MODEL, 0.9), MODEL, None)
    with pytest.raises(fs.UnstableTimestep):
        fs.check_timestep(MODEL, 0.0)


def test_step_is_pure():
    rng = np.random.default_rng(0)
    st = fs.SimState(0, 0.25, rng.random((5, 30, 100)) * MODEL.grid.mask)
    before = st.smoke.copy()
    new = fs.step(st, MODEL, fs.FireScenario(50, 15, 2))
    assert np.array_equal(st.smoke, before) and new is not st and new.step_index == 1


def test_sealed_conservation_short():
    m = COARSE.sealed()
    rng = np.random.default_rng(1)
    st = fs.SimState(0, 0.5, rng.random((5, m.ny, m.nx)) * m.grid.mask)
    m0 = st.total_mass(m)
    for _ in range(200):
        st = fs.step(st, m, None)
    assert abs(st.total_mass(m) - m0) / m0 < 1e-12


def test_source_mass_matches_midpoint_integral():
    m = COARSE.sealed()
    sc = fs.FireScenario(40.0, 6.0, 1, duration=300.0)
    dt = 0.5
    st = fs.initial_state(m, dt)
    for _ in range(400):
        st = fs.step(st, m, sc)
    p = m.physics
    oracle = math.fsum(sc.peak_hrr * min(1.0, ((n + 0.5) * dt / 150.0) ** 2) for n in range(400)) * dt \
        * p.soot_yield / p.heat_of_combustion
    assert st.total_mass(m) == pytest.approx(oracle, rel=1e-10)


def _floor_mass_after(sc, n=120):
    st = fs.initial_state(COARSE, 0.5)
    for _ in range(n):
        st = fs.step(st, COARSE, sc)
    return st.smoke.sum(axis=(1, 2))


def test_smoke_rises_through_openings():
    near = _floor_mass_after(fs.FireScenario(12.0, 22.0, 0, duration=60.0))
    far = _floor_mass_after(fs.FireScenario(84.0, 4.0, 0, duration=60.0))
    assert near[1] > 0.1 * near.sum()
    assert far[1] < 1e-6 * far[0]


def test_vents_only_remove_mass():
    rng = np.random.default_rng(2)
    st = fs.SimState(240, 0.5, rng.random((5, COARSE.ny, COARSE.nx)) * COARSE.grid.mask)
    assert st.vents_active
    prev = st.total_mass(COARSE)
    for _ in range(100):
        st = fs.step(st, COARSE, None)
        now = st.total_mass(COARSE)
        assert now <= prev
        prev = now
    assert (st.smoke >= 0).all()


def test_visibility_field():
    smoke = np.zeros((5, 30, 100))
    vis = fs.visibility(smoke, MODEL)
    assert np.isnan(vis[0, 13, 31]) and vis[0, 0, 0] == 30.0
    smoke[0, 0, 0] = 3.0 / (8700.0 * 6.0)
    assert fs.visibility(smoke, MODEL)[0, 0, 0] == pytest.approx(6.0)
    smoke[0, 0, 0] = 1e-9
    assert fs.visibility(smoke, MODEL)[0, 0, 0] == 30.0


def test_integrate_output_timing():
    sc = fs.FireScenario(50.0, 15.0, 2, duration=60.0)
    st = fs.OutputSettings(dt=0.5, devc_interval=15.0, hrr_interval=15.0, slice_interval=5.0)
    slices, devc, hrr, act = [], [], [], []
    fs.integrate(COARSE, sc, st, on_slice=lambda k, v: slices.append(k), on_devc=lambda t, v: devc.append(t),
                 on_hrr=hrr.append, on_activate=act.append)
    assert slices == list(range(12))
    assert devc == hrr == [15.0, 30.0, 45.0, 60.0]
    assert act == []  # vents open at 120 s


def test_slice_is_interval_mean():
    sc = fs.FireScenario(50.0, 15.0, 2, duration=10.0)
    st = fs.OutputSettings(dt=0.5, slice_interval=2.5, devc_interval=5.0, hrr_interval=5.0)
    got = fs.simulate_slices(COARSE, sc, st)
    state = fs.initial_state(COARSE, 0.5)
    fields = []
    for _ in range(20):
        fields.append(fs.visibility(state.smoke, COARSE))
        state = fs.step(state, COARSE, sc)
    want = np.stack([np.mean(fields[5 * k:5 * k + 5], axis=0) for k in range(4)])
    np.testing.assert_allclose(got, want, rtol=1e-14, equal_nan=True)


def test_bad_intervals():
    sc = fs.FireScenario(50.0, 15.0, 2, duration=10.0)
    with pytest.raises(ValueError):
        fs.simulate_slices(COARSE, sc, fs.OutputSettings(dt=0.5, slice_interval=0.7))


def test_run_scenario_files(tmp_path):
    sc = fs.FireScenario(12.0, 22.0, 0, duration=180.0)
    st = fs.OutputSettings(dt=0.5, chid="case")
    out = fs.run_scenario(COARSE, sc, tmp_path, st)
    f = out.files
    assert set(f) == {"input", "devc", "hrr", "console", "state", "slices"}
    devc = ff.parse_metric_table(f["devc"].read_text())
    assert devc.names == fs.devc_columns(COARSE)
    assert devc.column("Time") == [15.0 * k for k in range(1, 13)]
    assert all(0 <= v <= 30 for v in devc.column("VISIBILITY_MIN"))
    hrr = ff.parse_metric_table(f["hrr"].read_text(), "hrr")
    assert hrr.column("HRR")[-1] == pytest.approx(1000.0)
    assert hrr.units[1] == "kW"
    states = list(ff.iter_state_log(f["state"].read_text()))
    assert {(s.time, s.name) for s in states} >= {(120.0, "VENTS_OPEN")}
    con = [ff.parse_console_line(ln) for ln in f["console"].read_text().splitlines()]
    assert con[0].kind == "version" or any(c.kind == "version" for c in con)
    assert con[-1].kind == "other" or any(c.kind == "timestep" for c in con)
    hist = fs.read_slice_history(f["slices"])
    assert hist.data.shape == (36, 5, 15, 50) and hist.dt_out == 5.0 and hist.cell == 2.0


def test_run_scenario_rejects_bad_location(tmp_path):
    with pytest.raises(fs.InvalidLocation):
        fs.run_scenario(MODEL, fs.FireScenario(31.0, 13.0, 0), tmp_path)


def test_slice_history_round_trip(tmp_path):
    data = np.random.default_rng(4).random((3, 2, 4, 5)) * 30
    data[:, :, 0, 0] = np.nan
    path = fs.write_slice_history(tmp_path / "s.bin", data, 2.5, 2.0)
    back = fs.read_slice_history(path)
    np.testing.assert_array_equal(back.data, data.astype("<f4").astype(np.float64))
    assert back.times.tolist() == [0.0, 2.5, 5.0]
    (tmp_path / "junk.bin").write_bytes(b"nope\n")
    with pytest.raises(ValueError):
        fs.read_slice_history(tmp_path / "junk.bin")


def test_input_namelist_round_trip(tmp_path):
    sc = fs.FireScenario(10.6617, 2.0, 2, peak_hrr=2e6, growth_time=75.0, duration=600.0)
    st = fs.OutputSettings(dt=0.5, devc_interval=10.0, slice_interval=2.5, chid="opt_07")
    path = fs.write_input(tmp_path / "opt_07.fds", sc, st)
    model, sc2, st2 = fs.scenario_from_namelist(ff.parse_namelist(path.read_text()))
    assert sc2 == sc and st2 == st and model == MODEL


def test_load_scenario_toml(tmp_path):
    (tmp_path / "b.toml").write_text("width = 40.0\ndepth = 20.0\nfloor_labels = ['G', 'F1']\n")
    (tmp_path / "s.toml").write_text(
        "building = 'b.toml'\n[scenario]\nx = 5.0\ny = 6.0\nfloor = 1\n[output]\nchid = 'c'\ndt = 0.5\n")
    model, sc, st, ref = fs.load_scenario_toml(tmp_path / "s.toml")
    assert (model.width, model.n_floors, sc.floor, st.chid, st.dt) == (40.0, 2, 1, "c", 0.5)
    assert ref == str((tmp_path / "b.toml").resolve())


def test_child_entry_point(tmp_path):
    sc = fs.FireScenario(12.0, 22.0, 0, duration=30.0)
    st = fs.OutputSettings(dt=0.5, chid="kid")
    b = tmp_path / "b.toml"
    b.write_text("cell = 2.0\n")
    fs.write_input(tmp_path / "kid.fds", sc, st, building_ref=str(b))
    assert fs.main([str(tmp_path / "kid.fds")]) == 0
    assert (tmp_path / "kid_devc.csv").exists()
    assert fs.main([]) == 2
    assert fs.main([str(tmp_path / "missing.fds")]) == 1
