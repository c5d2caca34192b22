from pathlib import Path

import numpy as np
import pytest

from levee.materials import SoilMaterial, VanGenuchtenParams, load_materials
from levee.mesh import CrossSectionGeometry, load_geometry

DATA = Path(__file__).resolve().parents[1] / "src" / "levee" / "data"


def rect_geometry(width, y0, y1, tags=("Impervious", "LandFace", "Impervious", "RiverFace"),
                  interfaces=(), strata=("soil",), land_heads=None, x0=0.0, name="rect"):
    """Axis-aligned rectangle, counterclockwise from the bottom-left corner:
    bottom, right, top, left."""
    outer = [[x0, y0], [x0 + width, y0], [x0 + width, y1], [x0, y1]]
    return CrossSectionGeometry(outer=outer, tags=list(tags),
                                interfaces=[np.asarray(i, float) for i in interfaces],
                                strata=list(strata), land_anchor_x=x0 + width,
                                land_heads=land_heads or {s: y1 for s in strata}, name=name)


def saturated(name="soil", k=1.0, gamma=20.0, E=10.0, nu=0.3, c=10.0, phi=20.0, **kw):
    return SoilMaterial(name=name, hydraulic_conductivity=k, density_wet=gamma, E_drained=E,
                        nu_drained=nu, cohesion=c, friction_angle=phi, **kw)


def unsaturated(name="soil", k=1.0, alpha=2.0, n=1.5, theta_s=0.4, theta_r=0.045, **kw):
    return saturated(name, k, vg=VanGenuchtenParams(alpha, n, theta_s, theta_r), **kw)


def slope_geometry(height=10.0, ratio=2.0, crest=10.0, toe=15.0, depth=5.0,
                   river_tag="Impervious", strata=("soil",)):
    """Homogeneous embankment slope facing left: foundation of ``depth`` below the toe."""
    xt = toe
    xc = xt + ratio * height
    xe = xc + crest
    outer = [[0.0, -depth], [xe, -depth], [xe, height], [xc, height], [xt, 0.0], [0.0, 0.0]]
    tags = ["Impervious", "Impervious", "Impervious", river_tag, river_tag, "Impervious"]
    return CrossSectionGeometry(outer=outer, tags=tags, interfaces=[], strata=list(strata),
                                land_anchor_x=xc, land_heads={s: -depth for s in strata},
                                name="slope")


@pytest.fixture(scope="session")
def boston_geometry():
    return load_geometry(DATA / "boston_geometry.json")


@pytest.fixture(scope="session")
def boston_materials():
    return load_materials(DATA / "boston_materials.json")


@pytest.fixture(scope="session")
def data_dir():
    return DATA


# -- acceptance verdicts, echoed in the terminal summary --------------------------

VERDICTS: list[str] = []


def verdict(label: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
    VERDICTS.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for line in VERDICTS:
            terminalreporter.write_line(line)
