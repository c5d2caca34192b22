"""Factor-of-safety look-up table over river level and in-dike water level.

Queries interpolate bilinearly inside the grid and never extrapolate.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .ingest import SensorSeries, absolute_times, estimate_gwl
from .lem import NoValidCircle, SearchGrid, build_phreatic, default_search_grid, search_critical
from .materials import GAMMA_W, SoilMaterial, materials_hash
from .mesh import CrossSectionGeometry
from .seepage import TideSeries


class OutOfRange(ValueError):
    def __init__(self, axis: str, value: float, lo: float, hi: float):
        self.axis, self.value, self.lo, self.hi = axis, value, lo, hi
        super().__init__(f"{axis}={value} outside table range [{lo}, {hi}]")


class TableError(ValueError):
    pass


@dataclass(frozen=True)
class FosMatrix:
    """FoS values on an (RL, GWL) grid; ``fos[i, j]`` belongs to
    ``rl[i], gwl[j]``.  ``circles`` holds one critical-circle record per cell
    (or None) in the same row-major order."""

    rl: tuple
    gwl: tuple
    fos: np.ndarray
    circles: tuple = ()
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        rl = tuple(float(v) for v in self.rl)
        gwl = tuple(float(v) for v in self.gwl)
        fos = np.array(self.fos, dtype=float)
        fos.setflags(write=False)
        object.__setattr__(self, "rl", rl)
        object.__setattr__(self, "gwl", gwl)
        object.__setattr__(self, "fos", fos)
        if not rl or not gwl:
            raise TableError("grids must be non-empty")
        if np.any(np.diff(rl) <= 0) or np.any(np.diff(gwl) <= 0):
            raise TableError("grids must be strictly ascending")
        if fos.shape != (len(rl), len(gwl)):
            raise TableError(f"values have shape {fos.shape}, grid is {len(rl)}x{len(gwl)}")
        if not np.all(fos > 0):
            raise TableError("all factors of safety must be positive")
        if self.circles and len(self.circles) != fos.size:
            raise TableError("need one circle record per cell")

    def value(self, rl: float, gwl: float) -> float:
        return float(self.fos[self.rl.index(float(rl)), self.gwl.index(float(gwl))])

    def nodes(self):
        for i, r in enumerate(self.rl):
            for j, g in enumerate(self.gwl):
                yield r, g, float(self.fos[i, j])

    def to_dict(self) -> dict:
        return {"rl": list(self.rl), "gwl": list(self.gwl),
                "fos": [[float(v) for v in row] for row in self.fos],
                "circles": list(self.circles) if self.circles else None,
                "provenance": dict(self.provenance)}

    @classmethod
    def from_dict(cls, d: dict) -> "FosMatrix":
        try:
            return cls(d["rl"], d["gwl"], d["fos"], tuple(d.get("circles") or ()),
                       dict(d.get("provenance") or {}))
        except KeyError as exc:
            raise TableError(f"matrix file missing field {exc}") from None

    @classmethod
    def from_cells(cls, cells, provenance: dict | None = None) -> "FosMatrix":
        """Matrix from ``{"rl", "gwl", "fos"}`` records that cover a full grid."""
        rl = sorted({float(c["rl"]) for c in cells})
        gwl = sorted({float(c["gwl"]) for c in cells})
        fos = np.full((len(rl), len(gwl)), np.nan)
        for c in cells:
            fos[rl.index(float(c["rl"])), gwl.index(float(c["gwl"]))] = float(c["fos"])
        if np.isnan(fos).any():
            raise TableError("cells do not cover a complete grid")
        return cls(rl, gwl, fos, provenance=provenance or {})

    def stale(self, geometry: CrossSectionGeometry, materials) -> bool:
        """True when the stored hashes no longer match the inputs."""
        p = self.provenance
        return (p.get("geometry_hash") != geometry.fingerprint()
                or p.get("materials_hash") != materials_hash(materials))


def save_matrix(matrix: FosMatrix, path) -> None:
    Path(path).write_text(json.dumps(matrix.to_dict(), indent=1, sort_keys=True) + "\n")


def load_matrix(path) -> FosMatrix:
    return FosMatrix.from_dict(json.loads(Path(path).read_text()))


def load_reference_table(path) -> tuple[FosMatrix, list[dict]]:
    """Reference table file: ``{"cells": [{"rl", "gwl", "fos", ...}, ...]}``.

    Rows at river levels that do not cover every water level (the single
    low-water row of the published table) are kept in the returned cell list
    but left out of the matrix.
    """
    d = json.loads(Path(path).read_text())
    cells = d["cells"]
    gwl = {float(c["gwl"]) for c in cells}
    by_rl: dict[float, set] = {}
    for c in cells:
        by_rl.setdefault(float(c["rl"]), set()).add(float(c["gwl"]))
    full = [c for c in cells if by_rl[float(c["rl"])] == gwl]
    prov = {"source": d.get("name", "reference table")}
    return FosMatrix.from_cells(full, prov), cells


def _axis_weight(grid: tuple, v: float, axis: str) -> tuple[int, float]:
    lo, hi = grid[0], grid[-1]
    if not lo <= v <= hi:
        raise OutOfRange(axis, v, lo, hi)
    if len(grid) == 1:
        return 0, 0.0
    i = int(np.searchsorted(grid, v, side="right")) - 1
    i = min(max(i, 0), len(grid) - 2)
    return i, (v - grid[i]) / (grid[i + 1] - grid[i])


def query(matrix: FosMatrix, rl: float, gwl: float) -> float:
    """Bilinear interpolation; exact at grid nodes."""
    rl, gwl = float(rl), float(gwl)
    if not (np.isfinite(rl) and np.isfinite(gwl)):
        raise ValueError("query coordinates must be finite")
    i, s = _axis_weight(matrix.rl, rl, "rl")
    j, t = _axis_weight(matrix.gwl, gwl, "gwl")
    f = matrix.fos
    i1 = min(i + 1, f.shape[0] - 1)
    j1 = min(j + 1, f.shape[1] - 1)
    # weights of exactly 0 or 1 leave node values untouched
    a = f[i, j] if t == 0 else (f[i, j1] if t == 1 else (1 - t) * f[i, j] + t * f[i, j1])
    if s == 0:
        return float(a)
    b = f[i1, j] if t == 0 else (f[i1, j1] if t == 1 else (1 - t) * f[i1, j] + t * f[i1, j1])
    return float(b if s == 1 else (1 - s) * a + s * b)


@dataclass(frozen=True)
class SensorQuery:
    fos: float
    rl: float
    gwl: float
    time: float
    window: tuple[float, float]

    def to_dict(self) -> dict:
        return {"fos": self.fos, "rl": self.rl, "gwl": self.gwl, "time": self.time,
                "time_iso8601": datetime.fromtimestamp(self.time, tz=timezone.utc)
                .isoformat().replace("+00:00", "Z"), "window": list(self.window)}


def query_from_sensors(matrix: FosMatrix, river: TideSeries, piezometer: SensorSeries,
                       t: float | datetime, window: float = 2 * 12.4206 * 3600.0,
                       gamma_w: float = GAMMA_W) -> SensorQuery:
    """FoS from the river level at ``t`` and the water table implied by the
    piezometer's mean pressure over the preceding ``window`` seconds (clipped
    to the start of the record)."""
    t = t.timestamp() if isinstance(t, datetime) else float(t)
    tr = absolute_times(river)
    if not tr[0] <= t <= tr[-1]:
        raise OutOfRange("time", t, float(tr[0]), float(tr[-1]))
    p0, p1 = piezometer.window
    if not p0 <= t <= p1:
        raise OutOfRange("time", t, p0, p1)
    rl = float(np.interp(t, tr, river.levels))
    win = (max(t - window, p0), t)
    gwl = estimate_gwl(piezometer, win, gamma_w)
    return SensorQuery(query(matrix, rl, gwl), rl, gwl, t, win)


def _cell(args):
    geom, strata, rl, gwl, grid, kw = args
    try:
        res = search_critical(geom, strata, build_phreatic(rl, gwl, geom), rl, grid, **kw)
    except NoValidCircle as exc:
        raise NoValidCircle(f"cell RL={rl}, GWL={gwl}: {exc}") from None
    c = res.circle.to_dict()
    c["fos"] = res.fos
    return res.fos, c


def default_workers() -> int:
    env = os.environ.get("LEVEE_WORKERS")
    return max(1, int(env)) if env else (os.cpu_count() or 1)


def build_matrix(geometry: CrossSectionGeometry, strata: dict[str, SoilMaterial] | list,
                 rl_grid, gwl_grid, grid: SearchGrid | None = None, workers: int | None = None,
                 gamma_w: float = GAMMA_W, **search_kw) -> FosMatrix:
    """Critical-circle search for every (RL, GWL) pair.

    Cells are independent; with ``workers > 1`` they run in a process pool
    and are gathered back in grid order, so the result does not depend on
    scheduling.
    """
    rl_grid = [float(v) for v in rl_grid]
    gwl_grid = [float(v) for v in gwl_grid]
    if not rl_grid or not gwl_grid:
        raise TableError("grids must be non-empty")
    grid = grid or default_search_grid(geometry)
    kw = dict(search_kw, gamma_w=gamma_w)
    jobs = [(geometry, strata, r, g, grid, kw) for r in rl_grid for g in gwl_grid]
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            out = list(pool.map(_cell, jobs))
    else:
        out = [_cell(j) for j in jobs]
    fos = np.array([o[0] for o in out]).reshape(len(rl_grid), len(gwl_grid))
    prov = {"geometry_hash": geometry.fingerprint(),
            "materials_hash": materials_hash(strata if isinstance(strata, dict)
                                             else dict(zip(geometry.strata, strata))),
            "created": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
            "gamma_w": gamma_w, "search_grid": grid.to_dict()}
    return FosMatrix(rl_grid, gwl_grid, fos, tuple(o[1] for o in out), prov)
