import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from levee.materials import (GAMMA_W, MaterialError, SoilMaterial, VanGenuchtenParams,
                             drucker_prager_params, effective_saturation, load_materials,
                             moisture_capacity, relative_permeability, relative_permeability_p,
                             save_materials, scale_strength, undrained_transform, water_content)

CLAY = VanGenuchtenParams(alpha=0.5, n=1.5, theta_s=0.43, theta_r=0.3)


def test_saturated_limit():
    assert effective_saturation(0.0, CLAY) == 1.0
    assert effective_saturation(12.0, CLAY) == 1.0


def test_clay_two_metre_suction():
    se = effective_saturation(-2.0 * GAMMA_W, CLAY)
    assert se == pytest.approx(2.0 ** (-1.0 / 3.0), rel=1e-14)
    assert se == pytest.approx(0.7937, abs=1e-4)


def test_deep_suction_goes_residual(boston_materials):
    vg = boston_materials["soft_brown_clay"].vg
    assert vg.theta_r == 0.3
    se = effective_saturation(-1e12, vg)
    assert 0 < se < 1e-5
    assert water_content(-1e12, vg) == pytest.approx(0.3, abs=1e-6)


def test_always_saturated_stratum():
    assert effective_saturation(-50.0, None) == 1.0
    assert relative_permeability(0.3, None) == 1.0
    assert moisture_capacity(-50.0, None) == 0.0


def test_kr_examples():
    assert relative_permeability(1.0, CLAY) == 1.0
    se = 2.0 ** (-1.0 / 3.0)
    expect = 2.0 ** (-1.0 / 6.0) * (1.0 - 2.0 ** (-1.0 / 3.0)) ** 2
    assert relative_permeability(se, CLAY) == pytest.approx(expect, rel=1e-12)
    assert relative_permeability(se, CLAY) == pytest.approx(0.0379, abs=1e-4)


def test_kr_near_saturation_matches_tabulation():
    # Mualem kr has an infinite slope at Se = 1 for n < 2, so "near" is judged
    # against a dense tabulation rather than a fixed fraction of unity
    se = np.linspace(0.99, 1.0, 100001)
    tab = relative_permeability(se, CLAY)
    got = relative_permeability(0.999, CLAY)
    assert got == pytest.approx(np.interp(0.999, se, tab), rel=1e-6)
    assert got < 1.0
    assert np.all(np.diff(tab) >= 0)


def test_kr_domain_error():
    with pytest.raises(MaterialError):
        relative_permeability(0.0, CLAY)
    with pytest.raises(MaterialError):
        relative_permeability(np.array([0.5, -0.1]), CLAY)


def test_kr_continuous_at_zero_pressure():
    left = relative_permeability_p(-1e-12, CLAY)
    assert left == pytest.approx(1.0, abs=1e-6)
    assert relative_permeability_p(0.0, CLAY) == 1.0


def test_capacity_zero_when_saturated():
    assert moisture_capacity(5.0, CLAY) == 0.0
    assert 0 < moisture_capacity(-1e9, CLAY) < 1e-12


def test_capacity_matches_finite_difference_at_two_metres():
    p = -2.0 * GAMMA_W
    h = 1e-3
    fd = (water_content(p + h, CLAY) - water_content(p - h, CLAY)) / (2 * h)
    assert moisture_capacity(p, CLAY) == pytest.approx(fd, rel=1e-4)


def test_capacity_sweep():
    p = -np.geomspace(1e-2, 1e3, 1000)
    h = 1e-3 * np.maximum(1.0, np.abs(p)) * 1e-3
    fd = (water_content(p + h, CLAY) - water_content(p - h, CLAY)) / (2 * h)
    c = moisture_capacity(p, CLAY)
    assert np.all(c >= 0)
    np.testing.assert_allclose(c, fd, rtol=1e-4)


@given(st.lists(st.floats(-500.0, 50.0, allow_nan=False), min_size=2, max_size=50))
def test_theta_and_kr_monotone(ps):
    p = np.sort(np.asarray(ps))
    th = water_content(p, CLAY)
    kr = relative_permeability_p(p, CLAY)
    assert np.all(np.diff(th) >= -1e-15)
    assert np.all(np.diff(kr) >= -1e-15)


def test_drucker_prager_examples():
    dp = drucker_prager_params(3.0, 0.0)
    assert dp.alpha_dp == 0.0 and dp.f_dp == 3.0
    dp = drucker_prager_params(2.0, 25.0)
    assert dp.alpha_dp == pytest.approx(0.1369, abs=5e-5)
    assert dp.f_dp == pytest.approx(1.761, abs=5e-4)
    dp2 = drucker_prager_params(4.0, 25.0)
    assert dp2.f_dp == pytest.approx(2 * dp.f_dp, rel=1e-15)
    assert dp2.alpha_dp == dp.alpha_dp


@settings(max_examples=200, deadline=None)
@given(c=st.floats(0.0, 50.0), phi=st.floats(0.0, 45.0), sm=st.floats(-500.0, 0.0),
       theta=st.floats(0.0, math.pi))
def test_dp_matches_plane_strain_mohr_coulomb(c, phi, sm, theta):
    """A plane-strain Mohr-Coulomb failure state with the out-of-plane stress
    fixed by zero out-of-plane plastic flow lies on the matched cone."""
    radius = c * math.cos(math.radians(phi)) - sm * math.sin(math.radians(phi))
    if radius <= 1e-6:
        return
    sxx = sm + radius * math.cos(2 * theta)
    syy = sm - radius * math.cos(2 * theta)
    sxy = radius * math.sin(2 * theta)
    dp = drucker_prager_params(c, phi)

    def invariants(szz):
        i1 = sxx + syy + szz
        m = i1 / 3
        j2 = 0.5 * ((sxx - m) ** 2 + (syy - m) ** 2 + (szz - m) ** 2) + sxy ** 2
        return i1, math.sqrt(j2), szz - m

    def flow_zz(szz):
        _, q, s = invariants(szz)
        return dp.alpha_dp + s / (2 * q)

    szz = brentq(flow_zz, sm - 10 * radius - 10, sm + 10 * radius + 10, xtol=1e-14, rtol=1e-15)
    i1, q, _ = invariants(szz)
    f = dp.alpha_dp * i1 + q - dp.f_dp
    scale = max(dp.f_dp, dp.alpha_dp * abs(i1), 1e-9)
    assert abs(f) <= 1e-9 * scale


def test_undrained_transform_table_values():
    eu, nu = undrained_transform(2.0, 0.35)
    assert nu == 0.49 and round(eu, 1) == 2.2 and eu == pytest.approx(2.2074, abs=1e-4)
    eu, _ = undrained_transform(2.0, 0.3)
    assert round(eu, 1) == 2.3
    assert undrained_transform(7.0, 0.49)[0] == 7.0


@given(st.floats(0.1, 100.0), st.floats(0.01, 0.49))
def test_undrained_preserves_shear_modulus(E, nu):
    eu, nuu = undrained_transform(E, nu)
    assert eu / (2 * (1 + nuu)) == pytest.approx(E / (2 * (1 + nu)), rel=1e-12)


def test_storage_is_inverse_bulk_modulus(boston_materials):
    clay = boston_materials["soft_brown_clay"]
    k_bulk = 2000.0 / (3 * (1 - 2 * 0.35))
    assert clay.storage == pytest.approx(1 / k_bulk, rel=1e-14)


def test_scale_strength():
    m = SoilMaterial("x", 1.0, 18.0, 2.0, 0.35, 2.0, 25.0)
    s = scale_strength(m, 2.0)
    assert s.cohesion == 1.0
    assert s.friction_angle == pytest.approx(13.12, abs=5e-3)
    assert scale_strength(m, 1.0) == m
    ab = scale_strength(scale_strength(m, 1.5), 2.0)
    direct = scale_strength(m, 3.0)
    assert ab.cohesion == pytest.approx(direct.cohesion, rel=1e-14)
    assert ab.tan_phi == pytest.approx(direct.tan_phi, rel=1e-14)
    with pytest.raises(MaterialError):
        scale_strength(m, 0.0)


@pytest.mark.parametrize("bad", [dict(hydraulic_conductivity=0.0), dict(nu_drained=0.5),
                                 dict(E_drained=-1.0), dict(cohesion=-1.0),
                                 dict(friction_angle=90.0)])
def test_invalid_material(bad):
    kw = dict(name="x", hydraulic_conductivity=1.0, density_wet=18.0, E_drained=2.0,
              nu_drained=0.3, cohesion=1.0, friction_angle=20.0)
    kw.update(bad)
    with pytest.raises(MaterialError):
        SoilMaterial(**kw)


@pytest.mark.parametrize("vg", [(0.0, 1.5, 0.4, 0.1), (1.0, 1.0, 0.4, 0.1), (1.0, 1.5, 0.3, 0.3)])
def test_invalid_van_genuchten(vg):
    with pytest.raises(MaterialError):
        VanGenuchtenParams(*vg)


def test_material_file_round_trip(tmp_path, boston_materials):
    path = tmp_path / "m.json"
    save_materials(boston_materials, path)
    assert load_materials(path) == boston_materials
    assert list(boston_materials) == ["made_ground", "fine_sand", "soft_brown_clay",
                                      "dark_brown_sand", "firm_grey_clay"]
