import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from levee.materials import scale_strength
from levee.mechanics import MechanicsModel
from levee.mesh import generate_cross_section
from levee.srf import BracketError, Scene, find_srf, scaled_materials

from conftest import saturated, slope_geometry


def test_scaled_materials_examples():
    mats = {"a": saturated("a", c=2.0, phi=25.0)}
    assert scaled_materials(mats, 1.0) == mats
    out = scaled_materials(mats, 2.0)["a"]
    assert out.cohesion == 1.0
    assert math.tan(math.radians(out.friction_angle)) == pytest.approx(0.23316, abs=1e-5)
    assert out.friction_angle == pytest.approx(13.12, abs=5e-3)
    assert out.hydraulic_conductivity == mats["a"].hydraulic_conductivity
    assert scaled_materials([mats["a"]], 2.0) == [out]


@given(st.floats(0.2, 5.0), st.floats(0.2, 5.0))
def test_scaling_composes(a, b):
    m = [saturated(c=7.0, phi=31.0)]
    two = scaled_materials(scaled_materials(m, a), b)[0]
    one = scaled_materials(m, a * b)[0]
    assert two.cohesion == pytest.approx(one.cohesion, rel=1e-12)
    assert math.tan(math.radians(two.friction_angle)) == pytest.approx(
        math.tan(math.radians(one.friction_angle)), rel=1e-12)


def threshold(limit):
    return lambda scene, f: (f < limit, None, 3)


def test_bisection_on_threshold():
    res = find_srf(None, trial_fn=threshold(1.37))
    lo, hi = res.bracket
    assert lo < 1.37 <= hi and hi - lo <= 0.01
    assert res.srf == 0.5 * (lo + hi)
    assert res.flags == []
    assert all(t["converged"] == (t["factor"] < 1.37) for t in res.trials)
    assert {"factor", "converged", "iterations"} <= set(res.trials[0])


def test_bracket_widens_down_once():
    res = find_srf(None, trial_fn=threshold(0.4))
    assert 0.25 <= res.bracket[0] < 0.4 <= res.bracket[1] <= 0.5


def test_bracket_errors():
    with pytest.raises(BracketError):
        find_srf(None, trial_fn=threshold(10.0))
    with pytest.raises(BracketError):
        find_srf(None, trial_fn=threshold(0.1))


def test_erratic_outcome_keeps_bracket_invariants():
    def erratic(scene, f):
        return (f < 1.2 or 1.8 < f < 2.0), None, 1
    res = find_srf(None, bracket0=(0.5, 2.6), trial_fn=erratic)
    outcome = {t["factor"]: t["converged"] for t in res.trials}
    lo, hi = res.bracket
    assert outcome[lo] and not outcome[hi]
    assert 0 < hi - lo <= 0.01


@pytest.fixture(scope="module")
def small_slope():
    geom = slope_geometry(height=6.0, ratio=1.5, crest=4.0, toe=6.0, depth=3.0)
    return generate_cross_section(geom, 1.5)


def _srf(mesh, mat):
    m = MechanicsModel(mesh, [mat])
    pre = m.gravity_settlement(None, None)
    return find_srf(Scene(m, pre, None, None, None, None), tol=0.01)


@pytest.fixture(scope="module")
def base_result(small_slope):
    return _srf(small_slope, saturated(c=15.0, phi=20.0))


def test_srf_scale_equivariance(small_slope, base_result):
    k = 1.25
    stronger = _srf(small_slope, scale_strength(saturated(c=15.0, phi=20.0), 1 / k))
    assert stronger.srf == pytest.approx(k * base_result.srf, abs=2 * 0.01)


def test_srf_is_deterministic(small_slope, base_result):
    again = _srf(small_slope, saturated(c=15.0, phi=20.0))
    strip = lambda r: [{k: v for k, v in t.items() if k != "seconds"} for t in r.trials]
    assert again.srf == base_result.srf and again.bracket == base_result.bracket
    assert strip(again) == strip(base_result)
    assert np.array_equal(again.critical.u, base_result.critical.u)


def test_critical_state_is_last_stable_trial(base_result):
    stable = [t["factor"] for t in base_result.trials if t["converged"]]
    assert base_result.bracket[0] == max(stable)
    assert base_result.critical.meta["strength_factor"] == max(stable)
