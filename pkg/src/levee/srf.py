"""Strength reduction: bisect on the factor at which the mechanical solve
under a fixed hydraulic load stops converging."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .materials import SoilMaterial, scale_strength
from .mechanics import MechanicsModel, NonConvergence, StressState

log = logging.getLogger(__name__)


class BracketError(RuntimeError):
    pass


def scaled_materials(materials, factor: float):
    """c/factor and atan(tan(phi)/factor) for every stratum."""
    if isinstance(materials, dict):
        return {k: scale_strength(m, factor) for k, m in materials.items()}
    return [scale_strength(m, factor) for m in materials]


@dataclass
class Scene:
    """A fixed hydraulic load applied on top of a stage-1 prestress."""

    model: MechanicsModel
    prestress: StressState
    p_old: np.ndarray | None
    p_new: np.ndarray | None
    h_old: float | None
    h_new: float | None
    n_steps: int = 4
    max_iter: int = 200
    tol: float = 1e-8


@dataclass
class SrfResult:
    srf: float
    bracket: tuple[float, float]
    trials: list = field(default_factory=list)
    critical: StressState | None = None
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"srf": self.srf, "bracket": list(self.bracket),
                "trials": [{k: v for k, v in t.items()} for t in self.trials],
                "flags": list(self.flags)}


def run_trial(scene: Scene, factor: float):
    """(converged, state or None, newton iterations) for one strength factor,
    restarting from the prestress every time."""
    try:
        st = scene.model.tidal_increment(scene.prestress, scene.p_old, scene.p_new,
                                         scene.h_old, scene.h_new, strength_factor=factor,
                                         n_steps=scene.n_steps, tol=scene.tol,
                                         max_iter=scene.max_iter)
        return True, st, st.meta.get("iterations", 0)
    except NonConvergence as exc:
        its = sum(x["iterations"] for x in getattr(exc, "log", []))
        return False, None, its


def find_srf(scene: Scene, bracket0=(0.5, 3.0), tol: float = 0.01, floor: float = 0.25,
             trial_fn=run_trial) -> SrfResult:
    """Bisection between a converging and a diverging strength factor."""
    lo, hi = map(float, bracket0)
    if not 0 < lo < hi:
        raise ValueError(f"bad bracket {bracket0}")
    trials, flags = [], []
    results: dict[float, bool] = {}
    best_state = None

    def trial(f):
        nonlocal best_state
        t0 = time.perf_counter()
        ok, st, its = trial_fn(scene, f)
        trials.append({"factor": f, "converged": ok, "iterations": int(its),
                       "seconds": round(time.perf_counter() - t0, 3)})
        log.info("srf trial %.5f -> %s (%d its)", f, "stable" if ok else "unstable", its)
        # monotonicity sanity check against earlier outcomes
        for g, okg in results.items():
            if ok and not okg and f > g:
                flags.append(f"non-monotone: {f:.5g} converged but {g:.5g} did not")
            if not ok and okg and f < g:
                flags.append(f"non-monotone: {f:.5g} failed but {g:.5g} converged")
        results[f] = ok
        if ok and (best_state is None or f >= best_state[0]):
            best_state = (f, st)
        return ok

    if not trial(lo):
        lo2 = floor
        if lo2 >= lo or not trial(lo2):
            raise BracketError(f"not stable even at strength factor {min(lo, lo2)}")
        hi, lo = lo, lo2
    elif trial(hi):
        raise BracketError(f"still stable at strength factor {hi}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if trial(mid):
            lo = mid
        else:
            hi = mid
    # resolve contradictions: keep the largest consistent bracket
    stable = [f for f, ok in results.items() if ok and f <= lo]
    lo = max(stable) if stable else lo
    res = SrfResult(srf=0.5 * (lo + hi), bracket=(lo, hi), trials=trials,
                    critical=best_state[1] if best_state else None, flags=flags)
    return res
