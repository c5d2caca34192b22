"""Two-stage FEM workflow: stationary flow and gravity settlement, then a
tidal flow run whose low- and high-water pressure fields are transferred as
loads to the mechanical model for a strength-reduction search."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .materials import GAMMA_W, SoilMaterial
from .mechanics import MechanicsModel, StressState
from .mesh import CrossSectionGeometry, Mesh, generate_cross_section
from .seepage import HydraulicBC, PressureField, SeepageModel, TideSeries
from .srf import Scene, SrfResult, find_srf

log = logging.getLogger(__name__)

PHASES = ("low-tide", "high-tide")


@dataclass
class TidalPhases:
    """Pressure fields at the chosen low and high water instants."""

    steady: PressureField
    steady_level: float
    fields: dict = field(default_factory=dict)      # phase -> PressureField
    levels: dict = field(default_factory=dict)      # phase -> river level
    run: object = None


def phase_times(tide: TideSeries, t0: float, t1: float, spinup: float) -> dict[str, float]:
    """Last low and high water sample times inside [t0 + spinup, t1]."""
    t = tide.times
    sel = (t >= t0 + spinup - 1e-9) & (t <= t1 + 1e-9)
    if not np.any(sel):
        raise ValueError("tide window shorter than the spin-up period")
    ts, lv = t[sel], tide.levels[sel]
    lo = np.flatnonzero(lv == lv.min())[-1]
    hi = np.flatnonzero(lv == lv.max())[-1]
    return {"low-tide": float(ts[lo]), "high-tide": float(ts[hi])}


def tidal_phases(seep: SeepageModel, bc: HydraulicBC, t0: float, t1: float, dt: float = 600.0,
                 spinup: float = 86400.0, steady_level: float | None = None,
                 sensors=None) -> TidalPhases:
    """Steady state at ``steady_level`` (default: mean river level over the
    window), then a tidal march that keeps the low/high water fields."""
    tide = bc.river
    t_end = min(t1, tide.window[1])
    times = phase_times(tide, t0, t_end, spinup)
    t_end = max(times.values())
    if steady_level is None:
        mask = (tide.times >= t0) & (tide.times <= t1)
        steady_level = float(tide.levels[mask].mean())
    sbc = HydraulicBC(TideSeries.constant(steady_level), dict(bc.land_heads), bc.gamma_w)
    steady = seep.steady_state(sbc, 0.0)
    out = TidalPhases(steady=steady, steady_level=steady_level)

    def grab(state):
        for name, tp in times.items():
            if abs(state.time - tp) < 1e-6 * dt:
                out.fields[name] = state
                out.levels[name] = tide.level(tp)

    init = PressureField(t0, steady.p.copy(), steady.saturation, steady.kr, steady.flux)
    out.run = seep.run_tidal(bc, t0, t_end, dt, sensors=sensors, initial=init, callback=grab)
    missing = set(times) - set(out.fields)
    if missing:
        raise RuntimeError(f"phase instants {missing} not on the time grid")
    return out


@dataclass
class FemAnalysis:
    mesh: Mesh
    seepage: SeepageModel
    mechanics: MechanicsModel
    phases: TidalPhases
    prestress: StressState
    srf: dict = field(default_factory=dict)          # phase -> SrfResult


def fem_analysis(geom: CrossSectionGeometry, materials: dict[str, SoilMaterial], tide: TideSeries,
                 h: float = 1.0, dt: float = 600.0, gamma_w: float = GAMMA_W,
                 phases=PHASES, tol: float = 0.01, bracket=(0.5, 3.0), spinup: float = 86400.0,
                 mesh: Mesh | None = None, sensors=None,
                 strict_seepage_face: bool = False) -> FemAnalysis:
    mesh = mesh if mesh is not None else generate_cross_section(geom, h)
    seep = SeepageModel(mesh, materials, gamma_w=gamma_w,
                        strict_seepage_face=strict_seepage_face)
    bc = HydraulicBC(tide, dict(geom.land_heads), gamma_w)
    ph = tidal_phases(seep, bc, tide.window[0], tide.window[1], dt, spinup, sensors=sensors)
    mech = MechanicsModel(mesh, materials, gamma_w=gamma_w)
    pre = mech.gravity_settlement(ph.steady.p, ph.steady_level)
    out = FemAnalysis(mesh, seep, mech, ph, pre)
    for name in phases:
        scene = Scene(mech, pre, ph.steady.p, ph.fields[name].p, ph.steady_level, ph.levels[name])
        out.srf[name] = find_srf(scene, bracket, tol)
        log.info("%s: SRF %.3f", name, out.srf[name].srf)
    return out
