import numpy as np
import pytest

from levee.materials import GAMMA_W, water_content
from levee.mesh import generate_cross_section
from levee.seepage import (HydraulicBC, SeepageModel, TideSeries, TimeOutOfRange, load_tide_csv,
                           save_tide_csv)

from conftest import rect_geometry, saturated, unsaturated
from oracles import fd_diffusion_1d

def total_head(model, p):
    return p / model.gamma_w + model.space.nodes[:, 1]


def probe(model, p, points):
    loc = model.sensor_locator({i: xy for i, xy in enumerate(points)})
    return np.array([N @ p[n] for n, N, _ in loc.values()])


# -- boundary conditions ---------------------------------------------------------

@pytest.fixture(scope="module")
def boston_model(boston_geometry, boston_materials):
    mesh = generate_cross_section(boston_geometry, 1.0)
    return SeepageModel(mesh, boston_materials)


def test_river_face_values(boston_model, boston_geometry):
    bc = HydraulicBC(TideSeries.constant(4.0), dict(boston_geometry.land_heads))
    d = boston_model.apply_bcs(bc, 0.0)
    y = boston_model.space.nodes[d.nodes, 1]
    river = np.isin(d.nodes, boston_model.river_nodes)
    wet = river & (y <= 4.0)
    np.testing.assert_allclose(d.values[wet], GAMMA_W * (4.0 - y[wet]), rtol=0, atol=1e-12)
    assert np.all(d.values[river & (y > 4.0)] == 0.0)
    bed = river & (y == -2.0)
    assert bed.any()
    np.testing.assert_allclose(d.values[bed], 58.86, atol=1e-12)


def test_node_at_water_line_is_zero():
    geom = rect_geometry(2.0, 0.0, 2.0)
    model = SeepageModel(generate_cross_section(geom, 0.5), [saturated()])
    d = model.apply_bcs(HydraulicBC(TideSeries.constant(1.0), {"soil": 1.0}), 0.0)
    y = model.space.nodes[d.nodes, 1]
    assert np.any(y == 1.0)
    assert np.all(d.values[y == 1.0] == 0.0)


def test_land_face_uses_stratum_head(boston_model, boston_geometry):
    bc = HydraulicBC(TideSeries.constant(0.0), dict(boston_geometry.land_heads))
    d = boston_model.apply_bcs(bc, 0.0)
    land = np.isin(d.nodes, boston_model.land_nodes)
    names = [boston_model.mesh.strata[s] for s in boston_model._land_stratum]
    head = dict(zip(boston_model.land_nodes.tolist(), names))
    y = boston_model.space.nodes[:, 1]
    for n, v in zip(d.nodes[land], d.values[land]):
        h = boston_geometry.land_heads[head[int(n)]]
        assert v == pytest.approx(GAMMA_W * max(h - y[n], 0.0), abs=1e-12)
    grey = [n for n in d.nodes[land] if head[int(n)] == "firm_grey_clay"]
    assert grey and boston_geometry.land_heads["firm_grey_clay"] == 0.5
    assert boston_geometry.land_heads["soft_brown_clay"] == 2.5


def test_time_outside_series():
    s = TideSeries(np.array([0.0, 10.0]), np.array([1.0, 2.0]))
    assert s.level(5.0) == 1.5
    with pytest.raises(TimeOutOfRange):
        s.level(11.0)
    with pytest.raises(ValueError):
        TideSeries(np.array([0.0, 0.0]), np.array([1.0, 2.0]))


def test_tide_csv_round_trip(tmp_path, data_dir):
    tide = load_tide_csv(data_dir / "tide_jan2012.csv")
    assert tide.levels.mean() == pytest.approx(0.6, abs=1e-3)
    assert tide.levels.min() == pytest.approx(-1.1, abs=1e-3)
    path = tmp_path / "t.csv"
    save_tide_csv(tide, path)
    back = load_tide_csv(path)
    np.testing.assert_array_equal(back.times, tide.times)
    np.testing.assert_array_equal(back.levels, tide.levels)


# -- steady state -----------------------------------------------------------------

def test_hydrostatic_no_flow():
    geom = rect_geometry(6.0, -4.0, 0.0, interfaces=[[[0, -2.0], [6, -2.0]]],
                         strata=("upper", "lower"), land_heads={"upper": 1.0, "lower": 1.0})
    model = SeepageModel(generate_cross_section(geom, 0.5),
                         [unsaturated("upper", k=2.0), saturated("lower", k=0.1)])
    st = model.steady_state(HydraulicBC(TideSeries.constant(1.0), {"upper": 1.0, "lower": 1.0}))
    assert np.max(np.abs(st.flux)) <= 1e-10
    np.testing.assert_allclose(total_head(model, st.p), 1.0, atol=1e-10)


def test_linear_head_and_uniform_darcy_flux():
    L, K = 10.0, 3.0
    geom = rect_geometry(L, -3.0, -1.0, land_heads={"soil": 1.0})
    model = SeepageModel(generate_cross_section(geom, 0.5), [saturated(k=K)])
    st = model.steady_state(HydraulicBC(TideSeries.constant(2.0), {"soil": 1.0}))
    x = model.space.nodes[:, 0]
    np.testing.assert_allclose(total_head(model, st.p), 2.0 - x / L, atol=1e-9)
    np.testing.assert_allclose(st.flux[:, 0], K * 1.0 / L, rtol=1e-8)
    np.testing.assert_allclose(st.flux[:, 1], 0.0, atol=1e-9)


def test_two_layer_series_interface_head():
    # vertical flow from the bed (head 5) up to the top face (head 3)
    k_up, k_lo = 0.5, 4.0
    geom = rect_geometry(1.0, 0.0, 2.0, tags=("RiverFace", "Impervious", "LandFace", "Impervious"),
                         interfaces=[[[0.0, 1.2], [1.0, 1.2]]], strata=("upper", "lower"),
                         land_heads={"upper": 3.0, "lower": 3.0})
    model = SeepageModel(generate_cross_section(geom, 0.2),
                         [saturated("upper", k=k_up), saturated("lower", k=k_lo)])
    st = model.steady_state(HydraulicBC(TideSeries.constant(5.0), {"upper": 3.0, "lower": 3.0}))
    # resistances in series: lower layer 1.2 m thick, upper 0.8 m
    q = (5.0 - 3.0) / (1.2 / k_lo + 0.8 / k_up)
    h_interface = 5.0 - q * 1.2 / k_lo
    y = model.space.nodes[:, 1]
    on = np.isclose(y, 1.2)
    assert on.sum() >= 3
    np.testing.assert_allclose(total_head(model, st.p)[on], h_interface, atol=1e-6)
    np.testing.assert_allclose(st.flux[:, 1], q, rtol=1e-6)


def test_maximum_principle_saturated():
    geom = rect_geometry(8.0, -5.0, -1.0, interfaces=[[[0, -2.5], [8, -3.5]]],
                         strata=("upper", "lower"), land_heads={"upper": 0.5, "lower": -0.5})
    model = SeepageModel(generate_cross_section(geom, 0.5),
                         [saturated("upper", k=0.2), saturated("lower", k=5.0)])
    st = model.steady_state(HydraulicBC(TideSeries.constant(2.0), {"upper": 0.5, "lower": -0.5}))
    d = model.apply_bcs(HydraulicBC(TideSeries.constant(2.0), {"upper": 0.5, "lower": -0.5}), 0)
    h = total_head(model, st.p)
    hd = h[d.nodes]
    span = hd.max() - hd.min()
    assert h.max() <= hd.max() + 1e-6 * span
    assert h.min() >= hd.min() - 1e-6 * span


def test_steady_residual_small(boston_model, boston_geometry):
    bc = HydraulicBC(TideSeries.constant(0.6), dict(boston_geometry.land_heads))
    st = boston_model.steady_state(bc)
    assert boston_model.stationary_residual(st.p, bc, 0.0) < 1e-8
    assert np.all(np.isfinite(st.flux))
    sat = boston_model.stratum == boston_model.mesh.strata.index("firm_grey_clay")
    assert np.all(st.saturation[sat] == 1.0)


# -- transient --------------------------------------------------------------------

def test_frozen_boundary_is_fixed_point():
    geom = rect_geometry(6.0, -4.0, 0.0, land_heads={"soil": -1.0})
    model = SeepageModel(generate_cross_section(geom, 0.5), [unsaturated(k=1.0)])
    bc = HydraulicBC(TideSeries.constant(-2.0), {"soil": -1.0})
    st = model.steady_state(bc, tol=1e-13)
    nxt = model.step(st, 600.0, bc, 600.0)
    assert np.max(np.abs(nxt.p - st.p)) <= 1e-8


def test_head_rise_matches_finite_differences():
    L, K, E, nu = 10.0, 1.0, 10.0, 0.3
    mat = saturated(k=K, E=E, nu=nu)
    geom = rect_geometry(L, -2.0, -1.0, land_heads={"soil": 1.0})
    model = SeepageModel(generate_cross_section(geom, 0.25), [mat])
    st = model.steady_state(HydraulicBC(TideSeries.constant(1.0), {"soil": 1.0}))
    bc = HydraulicBC(TideSeries.constant(3.0), {"soil": 1.0})
    dt, n = 100.0, 30
    xs = np.linspace(0.0, L, 41)
    pts = [(x, -1.5) for x in xs]
    history = [probe(model, st.p, pts)]
    t = 0.0
    for _ in range(n):
        st = model.step(st, dt, bc, t + dt)
        t += dt
        assert abs(st.info["error"]) <= 1e-6 * st.info["water"]
        history.append(probe(model, st.p, pts))
    history = np.array(history)
    # pressure rises toward the new linear profile without overshoot
    assert np.all(np.diff(history[:, 1:-1], axis=0) >= -1e-9)
    final_line = GAMMA_W * (3.0 - 2.0 * xs / L + 1.5)
    assert np.all(history[-1] <= final_line + 1e-9)
    D = (K / 86400.0) / (mat.storage * GAMMA_W)
    xf, H = fd_diffusion_1d(L, 1000, D, 1.0, 3.0, 1.0, dt, n)
    p_fd = GAMMA_W * (np.interp(xs, xf, H) + 1.5)
    change = history[-1] - history[0]
    err = np.linalg.norm(history[-1] - p_fd) / np.linalg.norm(change)
    assert err <= 0.02


def test_unsaturated_drainage_monotone(boston_materials):
    mg = boston_materials["made_ground"]
    geom = rect_geometry(1.0, -3.0, 0.0, tags=("RiverFace", "Impervious", "Impervious", "Impervious"),
                         strata=("made_ground",), land_heads={"made_ground": 0.0})
    model = SeepageModel(generate_cross_section(geom, 0.25), {"made_ground": mg})
    y = model.space.nodes[:, 1]
    bc = HydraulicBC(TideSeries.constant(-2.0), {"made_ground": 0.0})

    def march(dt, n):
        st = model.make_field(0.0, GAMMA_W * (0.0 - y))
        thetas = [water_content(st.p, mg.vg)]
        model.run_tidal(bc, 0.0, dt * n, dt, initial=st,
                        callback=lambda s: thetas.append(water_content(s.p, mg.vg)))
        return np.array(thetas)

    coarse = march(3600.0, 12)
    fine = march(900.0, 48)
    above = y > -2.0
    assert np.all(np.diff(coarse[:, above], axis=0) <= 1e-12)
    assert np.all(np.diff(fine[:, above], axis=0) <= 1e-12)
    drop = fine[0, above] - fine[-1, above]
    assert drop.max() > 0.01
    # the coarse march tracks the fine-step reference
    assert np.max(np.abs(coarse[-1, above] - fine[-1, above])) <= 0.1 * drop.max()


def test_constant_river_gives_constant_sensors(boston_model, boston_geometry):
    bc = HydraulicBC(TideSeries.constant(0.6), dict(boston_geometry.land_heads))
    st = boston_model.steady_state(bc)
    run = boston_model.run_tidal(bc, 0.0, 6 * 3600.0, 1800.0,
                                 sensors={"AC2": (43.0, 1.64), "AC4": (43.0, -3.96)}, initial=st)
    for sid in ("AC2", "AC4"):
        s = run.series(sid)
        assert np.ptp(s) <= 1e-6
    assert run.max_balance_error <= 1e-6


def test_step_rejects_bad_dt(boston_model, boston_geometry):
    bc = HydraulicBC(TideSeries.constant(0.6), dict(boston_geometry.land_heads))
    st = boston_model.make_field(0.0, boston_model.initial_guess(bc))
    with pytest.raises(ValueError):
        boston_model.step(st, 0.0, bc, 0.0)
    with pytest.raises(ValueError):
        boston_model.run_tidal(bc, 10.0, 5.0)


def test_run_outside_tide_window(boston_model, boston_geometry):
    tide = TideSeries(np.array([0.0, 3600.0]), np.array([0.0, 1.0]))
    bc = HydraulicBC(tide, dict(boston_geometry.land_heads))
    with pytest.raises(TimeOutOfRange):
        boston_model.run_tidal(bc, 0.0, 7200.0, 600.0)


def test_grid_convergence():
    geom = rect_geometry(4.0, -2.0, 0.0, tags=("RiverFace", "Impervious", "Impervious", "RiverFace"),
                         land_heads={"soil": 1.0})
    mat = saturated(k=86400 * 0.01 * GAMMA_W * 1.2e-4, E=10.0, nu=0.3)
    xs, ys = np.meshgrid(np.linspace(0.05, 3.95, 40), np.linspace(-1.95, -0.05, 20))
    pts = list(zip(xs.ravel(), ys.ravel()))

    def solve(h):
        model = SeepageModel(generate_cross_section(geom, h), [mat])
        st = model.steady_state(HydraulicBC(TideSeries.constant(1.0), {"soil": 1.0}))
        bc = HydraulicBC(TideSeries.constant(3.0), {"soil": 1.0})
        for k in range(10):
            st = model.step(st, 60.0, bc, 60.0 * (k + 1))
        return probe(model, st.p, pts)

    ref = solve(0.0625)
    e1 = np.sqrt(np.mean((solve(0.5) - ref) ** 2))
    e2 = np.sqrt(np.mean((solve(0.25) - ref) ** 2))
    assert e1 / e2 >= 3.0


PERIOD = 12 * 3600.0


@pytest.fixture(scope="module")
def sinusoid_run(boston_model, boston_geometry):
    tide = TideSeries.sinusoid(0.6, 3.0, PERIOD, 0.0, 2 * 86400.0, 600.0)
    bc = HydraulicBC(tide, dict(boston_geometry.land_heads))
    st = boston_model.steady_state(HydraulicBC(TideSeries.constant(0.6),
                                               dict(boston_geometry.land_heads)))
    return boston_model.run_tidal(bc, 0.0, 2 * 86400.0, 600.0, initial=st,
                                  sensors={"AC2": (43.0, 1.64), "AC4": (43.0, -3.96)})


LAST_TIDE = slice(-int(PERIOD / 600.0) - 1, None)


def test_sinusoidal_tide_damped_in_clay(sinusoid_run):
    a4 = np.ptp(sinusoid_run.series("AC4", "head")[LAST_TIDE])
    a2 = np.ptp(sinusoid_run.series("AC2", "head")[LAST_TIDE])
    assert a4 > 5 * a2
    assert sinusoid_run.max_balance_error <= 1e-6


def test_sand_head_follows_mean_river_level(sinusoid_run):
    mean_head = sinusoid_run.series("AC4", "head")[LAST_TIDE].mean()
    assert mean_head == pytest.approx(0.6, abs=0.2)


# -- strict seepage face ------------------------------------------------------------

def _drained_block(strict):
    geom = rect_geometry(10.0, 0.0, 4.0, land_heads={"soil": 0.5})
    model = SeepageModel(generate_cross_section(geom, 0.5), [unsaturated(k=1.0)],
                         strict_seepage_face=strict)
    bc = HydraulicBC(TideSeries.constant(2.0), {"soil": 0.5})
    return model, bc, model.steady_state(bc)


def test_strict_face_only_drains():
    plain, _, loose = _drained_block(False)
    model, bc, st = _drained_block(True)
    face = model.river_nodes
    dry = face[model.space.nodes[face, 1] > 2.0 + 1e-9]
    assert np.all(st.p[dry] <= 1e-8)
    # pinning the dry face at p = 0 feeds water in; the strict face does not
    assert probe(model, st.p, [(1.0, 3.5)])[0] < probe(plain, loose.p, [(1.0, 3.5)])[0]
    assert model.stationary_residual(st.p, bc, 0.0) <= 1e-6


def test_strict_face_tidal_steps():
    model, _, st = _drained_block(True)
    tide = TideSeries.sinusoid(2.0, 1.0, PERIOD, 0.0, 6 * 3600.0, 600.0)
    run = model.run_tidal(HydraulicBC(tide, {"soil": 0.5}), 0.0, 6 * 3600.0, 600.0, initial=st)
    assert run.max_balance_error <= 1e-6
