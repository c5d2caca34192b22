"""``levee`` command line: meshing, seepage, mechanics, strength reduction,
limit equilibrium, look-up tables and sensor calibration.

Exit codes: 0 success, 2 invalid input, 3 solver did not converge,
4 query outside the table or time range.  Failures print one JSON object
on stderr.  Results go to stdout as JSON and to files in the output
directory (``--out-dir``, or ``LEVEE_OUTPUT_DIR``).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import ingest, lem, lookup
from .materials import GAMMA_W, GAMMA_W_ROUNDED, MaterialError, load_materials
from .mechanics import MechanicsModel, NonConvergence, write_mechanics_vtk
from .mesh import (GeometryError, ParseError, ValidationError, generate_cross_section,
                   load_geometry, load_mesh, save_mesh)
from .pipeline import PHASES, fem_analysis, tidal_phases
from .seepage import (HydraulicBC, NonlinearDivergence, PressureField, SeepageModel, StepFailure,
                      TideSeries, TimeOutOfRange, load_tide_csv, parse_time, write_pressure_vtk)
from .srf import BracketError

log = logging.getLogger("levee")

DATA = Path(__file__).resolve().parent / "data"
DEFAULTS = {
    "geometry": str(DATA / "boston_geometry.json"),
    "materials": str(DATA / "boston_materials.json"),
    "tide": str(DATA / "tide_jan2012.csv"),
    "sensors": str(DATA / "sensors_jan2012.csv"),
    "registry": str(DATA / "boston_sensors.json"),
    "reference_table": str(DATA / "table2.json"),
    "h": 1.0,
    "dt": 600.0,
    "spinup": 86400.0,
    "gamma_w_mode": "standard",
    "srf_tol": 0.01,
    "srf_bracket": [0.5, 3.0],
    "newton_tol": 1e-8,
    "n_slices": 50,
    "lem_grid": [40, 40, 30],
    "min_depth": 0.0,
    "snapshot_every": 0,
    "strict_seepage_face": False,
}

_path = {"type": "string", "minLength": 1}
_num = {"type": "number"}
CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "levee run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "geometry": _path, "materials": _path, "mesh": _path, "tide": _path,
        "sensors": _path, "registry": _path, "matrix": _path, "reference_table": _path,
        "out_dir": _path,
        "workers": {"type": "integer", "minimum": 1},
        "h": {"type": "number", "exclusiveMinimum": 0, "maximum": 20},
        "dt": {"type": "number", "exclusiveMinimum": 0, "maximum": 86400},
        "spinup": {"type": "number", "minimum": 0},
        "t0": {"type": "string", "format": "date-time"},
        "t1": {"type": "string", "format": "date-time"},
        "gamma_w_mode": {"enum": ["standard", "rounded"]},
        "srf_tol": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "srf_bracket": {"type": "array", "items": {**_num, "exclusiveMinimum": 0},
                        "minItems": 2, "maxItems": 2},
        "newton_tol": {"type": "number", "exclusiveMinimum": 0, "maximum": 1e-2},
        "n_slices": {"type": "integer", "minimum": 10, "maximum": 1000},
        "lem_grid": {"type": "array", "items": {"type": "integer", "minimum": 1},
                     "minItems": 3, "maxItems": 3},
        "min_depth": {"type": "number", "minimum": 0},
        "snapshot_every": {"type": "integer", "minimum": 0},
        "strict_seepage_face": {"type": "boolean"},
    },
}
PATH_KEYS = ("geometry", "materials", "mesh", "tide", "sensors", "registry", "matrix",
             "reference_table")


class CliError(Exception):
    code = 2
    kind = "validation"

    def __init__(self, message, field=None, **extra):
        super().__init__(message)
        self.field = field
        self.extra = extra


class SolverError(CliError):
    code = 3
    kind = "nonconvergence"


class RangeError(CliError):
    code = 4
    kind = "out_of_range"


# -- output ----------------------------------------------------------------------

def fmt(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        return "null"
    return format(x, ".17g")


def dumps(obj, indent: int = 1, _level: int = 0) -> str:
    """JSON text with every float written to 17 significant digits."""
    pad, inner = " " * (indent * _level), " " * (indent * (_level + 1))
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}"
                 for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent, _level + 1) for v in obj) + "\n" + pad + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path: Path, obj) -> None:
    path.write_text(dumps(obj) + "\n")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


# -- configuration ------------------------------------------------------------------

def load_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            user = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config: {exc}", field="config") from None
        _validate(user)
        cfg.update(user)
    for key in CONFIG_SCHEMA["properties"]:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    cfg.setdefault("out_dir", os.environ.get("LEVEE_OUTPUT_DIR", "levee-out"))
    if "workers" not in cfg and os.environ.get("LEVEE_WORKERS"):
        try:
            cfg["workers"] = int(os.environ["LEVEE_WORKERS"])
        except ValueError:
            raise CliError("LEVEE_WORKERS must be an integer", field="workers") from None
    cfg.setdefault("workers", os.cpu_count() or 1)
    _validate(cfg)
    for key in PATH_KEYS:
        if key in cfg and not Path(cfg[key]).is_file():
            raise CliError(f"file not found: {cfg[key]}", field=key)
    if cfg["srf_bracket"][0] >= cfg["srf_bracket"][1]:
        raise CliError("lower bracket must be below upper", field="srf_bracket")
    cfg["gamma_w"] = GAMMA_W_ROUNDED if cfg["gamma_w_mode"] == "rounded" else GAMMA_W
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    cfg["out"] = out
    return cfg


def _validate(cfg: dict) -> None:
    checker = jsonschema.Draft202012Validator(CONFIG_SCHEMA,
                                              format_checker=jsonschema.FormatChecker())
    errors = sorted(checker.iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        field = ".".join(str(p) for p in e.path) or None
        if field is None and e.validator == "additionalProperties":
            field = next(k for k in cfg if k not in CONFIG_SCHEMA["properties"])
        raise CliError(e.message, field=field)


def _inputs(cfg):
    geom = load_geometry(cfg["geometry"])
    mats = load_materials(cfg["materials"])
    missing = [s for s in geom.strata if s not in mats]
    if missing:
        raise CliError(f"no material for strata {missing}", field="materials")
    return geom, mats


def _mesh(cfg, geom):
    if cfg.get("mesh"):
        return load_mesh(cfg["mesh"], geom.strata)
    return generate_cross_section(geom, cfg["h"])


def _window(cfg, tide: TideSeries):
    lo, hi = tide.window
    off = tide.epoch.timestamp() if tide.epoch else 0.0
    t0 = parse_time(cfg["t0"]).timestamp() - off if cfg.get("t0") else lo
    t1 = parse_time(cfg["t1"]).timestamp() - off if cfg.get("t1") else hi
    for name, t in (("t0", t0), ("t1", t1)):
        if not lo <= t <= hi:
            raise RangeError(f"{name} outside the tide record", field=name)
    if t1 <= t0:
        raise CliError("t1 must be after t0", field="t1")
    return t0, t1


def _tide(cfg):
    try:
        return load_tide_csv(cfg["tide"])
    except ValueError as exc:
        raise CliError(str(exc), field="tide") from None


def _sensor_points(cfg) -> dict:
    reg = ingest.load_registry(cfg["registry"])
    return {s.id: (s.x, s.y_od) for s in reg.values()}


def _pair(text: str, n: int, kind=float, field=None):
    try:
        vals = [kind(v) for v in text.split(",")]
    except ValueError:
        raise CliError(f"expected {n} comma-separated numbers, got {text!r}", field=field) from None
    if len(vals) != n:
        raise CliError(f"expected {n} comma-separated numbers, got {text!r}", field=field)
    return vals


def _grid(text: str, field: str):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"bad grid {text!r}", field=field) from None
    if not vals:
        raise CliError("grid must not be empty", field=field)
    return vals


# -- subcommands ----------------------------------------------------------------------

def cmd_mesh(args, cfg):
    geom, _ = _inputs(cfg)
    mesh = generate_cross_section(geom, cfg["h"])
    path = cfg["out"] / "mesh.json"
    save_mesh(mesh, path)
    return {"mesh": str(path), "n_nodes": mesh.n_nodes, "n_triangles": mesh.n_triangles,
            "h": cfg["h"], "geometry_hash": geom.fingerprint(),
            "boundary_length": {t: mesh.boundary_length(t) for t in sorted(set(mesh.boundary_tags))}}


def cmd_seep(args, cfg):
    geom, mats = _inputs(cfg)
    tide = _tide(cfg)
    t0, t1 = _window(cfg, tide)
    mesh = _mesh(cfg, geom)
    model = SeepageModel(mesh, mats, gamma_w=cfg["gamma_w"],
                         strict_seepage_face=cfg["strict_seepage_face"])
    m = (tide.times >= t0) & (tide.times <= t1)
    level = float(tide.levels[m].mean())
    steady = model.steady_state(HydraulicBC(TideSeries.constant(level), dict(geom.land_heads),
                                            cfg["gamma_w"]))
    init = PressureField(t0, steady.p.copy(), steady.saturation, steady.kr, steady.flux)
    bc = HydraulicBC(tide, dict(geom.land_heads), cfg["gamma_w"])
    run = model.run_tidal(bc, t0, t1, cfg["dt"], sensors=_sensor_points(cfg), initial=init,
                          snapshot_every=cfg["snapshot_every"])
    out = cfg["out"]
    run.write_csv(out / "virtual_sensors.csv", epoch=tide.epoch)
    write_pressure_vtk(out / "pressure_final.vtk", model, run.final)
    for k, snap in enumerate(run.snapshots[1:-1], start=1):
        write_pressure_vtk(out / f"pressure_{k:04d}.vtk", model, snap)
    stats = {}
    for sid in run.sensor_ids:
        hd = run.series(sid, "head")
        stats[sid] = {"head_mean": float(hd.mean()), "head_min": float(hd.min()),
                      "head_max": float(hd.max()), "p_mbar_mean": float(run.series(sid, "mbar").mean())}
    return {"steady_level": level, "n_steps": len(run.times) - 1,
            "max_balance_error": run.max_balance_error, "sensors": stats,
            "files": sorted(p.name for p in out.glob("pressure_*.vtk")) + ["virtual_sensors.csv"]}


def _phase_list(name: str):
    return list(PHASES) if name == "both" else [name]


def cmd_mech(args, cfg):
    geom, mats = _inputs(cfg)
    tide = _tide(cfg)
    t0, t1 = _window(cfg, tide)
    mesh = _mesh(cfg, geom)
    seep = SeepageModel(mesh, mats, gamma_w=cfg["gamma_w"],
                        strict_seepage_face=cfg["strict_seepage_face"])
    bc = HydraulicBC(tide, dict(geom.land_heads), cfg["gamma_w"])
    ph = tidal_phases(seep, bc, t0, t1, cfg["dt"], cfg["spinup"])
    mech = MechanicsModel(mesh, mats, gamma_w=cfg["gamma_w"])
    pre = mech.gravity_settlement(ph.steady.p, ph.steady_level)
    out = cfg["out"]
    write_mechanics_vtk(out / "gravity.vtk", mech, pre, ph.steady.p)
    res = {"gravity": {"steady_level": ph.steady_level,
                       "equilibrium_error": mech.equilibrium_error(pre, ph.steady.p, ph.steady_level),
                       "max_displacement": float(np.abs(pre.displacement()).max()),
                       "max_yield_ratio": mech.max_yield_ratio(pre)}}
    for name in _phase_list(args.phase):
        st = mech.tidal_increment(pre, ph.steady.p, ph.fields[name].p, ph.steady_level,
                                  ph.levels[name], tol=cfg["newton_tol"])
        write_mechanics_vtk(out / f"{name}.vtk", mech, st, ph.fields[name].p)
        du = st.displacement() - pre.displacement()
        res[name] = {"river_level": ph.levels[name], "time": ph.fields[name].time,
                     "max_incremental_displacement": float(np.abs(du).max()),
                     "max_yield_ratio": mech.max_yield_ratio(st)}
    return res


def cmd_srf(args, cfg):
    geom, mats = _inputs(cfg)
    tide = _tide(cfg)
    t0, t1 = _window(cfg, tide)
    sub = TideSeries(tide.times[(tide.times >= t0) & (tide.times <= t1)],
                     tide.levels[(tide.times >= t0) & (tide.times <= t1)], tide.epoch)
    a = fem_analysis(geom, mats, sub, h=cfg["h"], dt=cfg["dt"], gamma_w=cfg["gamma_w"],
                     phases=_phase_list(args.phase), tol=cfg["srf_tol"],
                     bracket=tuple(cfg["srf_bracket"]), spinup=cfg["spinup"],
                     mesh=_mesh(cfg, geom) if cfg.get("mesh") else None,
                     strict_seepage_face=cfg["strict_seepage_face"])
    out = cfg["out"]
    res = {"n_triangles": a.mesh.n_triangles, "steady_level": a.phases.steady_level}
    xc = a.mesh.centroids()
    for name, r in a.srf.items():
        entry = r.to_dict()
        entry["river_level"] = a.phases.levels[name]
        entry["time"] = a.phases.fields[name].time
        res[name] = entry
        if r.critical is not None:
            write_mechanics_vtk(out / f"srf_{name}.vtk", a.mechanics, r.critical,
                                a.phases.fields[name].p)
            d = r.critical.cell_eqps() - a.prestress.cell_eqps()
            write_csv(out / f"plastic_strain_{name}.csv", ["x", "y", "stratum", "eqps_increment"],
                      [(float(x), float(y), geom.strata[s], float(v))
                       for (x, y), s, v in zip(xc, a.mesh.stratum, d)])
    if len(a.srf) == 1:
        res["phase"], only = next(iter(a.srf.items()))
        res["srf"] = only.srf
        res["bracket"] = list(only.bracket)
        res["trials"] = only.to_dict()["trials"]
    return res


def cmd_lem(args, cfg):
    geom, mats = _inputs(cfg)
    nx, ny, nr = cfg["lem_grid"]
    grid = lem.default_search_grid(geom, nx, ny, nr)
    phr = lem.build_phreatic(args.rl, args.gwl, geom)
    res = lem.search_critical(geom, mats, phr, args.rl, grid, n_slices=cfg["n_slices"],
                              gamma_w=cfg["gamma_w"], min_depth=cfg["min_depth"])
    out = cfg["out"]
    recs = res.slices.to_records()
    write_csv(out / "slices.csv", list(recs[0]), [list(r.values()) for r in recs])
    write_csv(out / "circle.csv", ["x", "y"], [tuple(map(float, p)) for p in res.circle.polyline()])
    write_csv(out / "phreatic.csv", ["x", "y"], [tuple(map(float, p)) for p in phr.points])
    return {"rl": args.rl, "gwl": args.gwl, "fos": res.fos, "circle": res.circle.to_dict(),
            "n_evaluated": res.n_evaluated, "n_valid": res.n_valid, "grid": grid.to_dict(),
            "slices": recs}


def _matrix(cfg):
    if cfg.get("matrix"):
        try:
            return lookup.load_matrix(cfg["matrix"])
        except (ValueError, KeyError) as exc:
            raise CliError(str(exc), field="matrix") from None
    return lookup.load_reference_table(cfg["reference_table"])[0]


def cmd_table_build(args, cfg):
    geom, mats = _inputs(cfg)
    nx, ny, nr = cfg["lem_grid"]
    m = lookup.build_matrix(geom, mats, _grid(args.rl_grid, "rl_grid"), _grid(args.gwl_grid, "gwl_grid"),
                            grid=lem.default_search_grid(geom, nx, ny, nr), workers=cfg["workers"],
                            gamma_w=cfg["gamma_w"], n_slices=cfg["n_slices"],
                            min_depth=cfg["min_depth"])
    out = cfg["out"]
    write_json(out / "fos_matrix.json", m.to_dict())
    write_csv(out / "fos_matrix.csv", ["rl", "gwl", "fos"], list(m.nodes()))
    return {"matrix": str(out / "fos_matrix.json"), "rl": list(m.rl), "gwl": list(m.gwl),
            "fos": m.fos.tolist()}


def cmd_table_query(args, cfg):
    m = _matrix(cfg)
    return {"rl": args.rl, "gwl": args.gwl, "fos": lookup.query(m, args.rl, args.gwl)}


def _sensor_readout(cfg):
    reg = ingest.load_registry(cfg["registry"])
    return reg, ingest.read_sensor_csv(cfg["sensors"], reg)


def cmd_table_query_sensors(args, cfg):
    m = _matrix(cfg)
    tide = _tide(cfg)
    _, readout = _sensor_readout(cfg)
    series = readout.get(args.piezometer)
    try:
        at = parse_time(args.at)
    except ValueError:
        raise CliError(f"bad timestamp {args.at!r}", field="at") from None
    q = lookup.query_from_sensors(m, tide, series, at, gamma_w=cfg["gamma_w"])
    res = q.to_dict()
    res["piezometer"] = args.piezometer
    res["rejected_rows"] = len(readout.rejected)
    return res


def cmd_calibrate(args, cfg):
    geom, mats = _inputs(cfg)
    if args.stratum not in mats:
        raise CliError(f"unknown stratum {args.stratum!r}", field="stratum")
    reg, readout = _sensor_readout(cfg)
    target = readout.get(args.target)
    point = _pair(args.point, 2, field="point") if args.point else (reg[args.target].x,
                                                                   reg[args.target].y_od)
    lo, hi = _pair(args.bounds, 2, field="bounds")
    if not (0 < lo <= hi):
        raise CliError("bounds must be positive and ordered", field="bounds")
    tide = _tide(cfg)
    t0, t1 = _window(cfg, tide)
    scene = ingest.CalibrationScene(_mesh(cfg, geom), mats, tide, dict(geom.land_heads), t0, t1,
                                    cfg["dt"], cfg["gamma_w"],
                                    strict_seepage_face=cfg["strict_seepage_face"])
    res = ingest.calibrate_conductivity(scene, args.stratum, target, tuple(point), (lo, hi),
                                        tol_decades=args.tol_decades)
    out = cfg["out"]
    write_csv(out / "calibration_curve.csv", ["k_m_per_day", "rmse_mbar"],
              sorted((float(k), float(r)) for k, r in res.curve))
    d = res.to_dict()
    d["point"] = list(point)
    d["target"] = args.target
    return d


def _simulated_series(path: Path, point_id: str):
    times, values = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["point_id"] == point_id:
                times.append(parse_time(row["time"]).timestamp())
                values.append(float(row["p_mbar"]))
    if not times:
        raise CliError(f"no rows for point {point_id!r} in {path}", field="simulated")
    return np.array(times), np.array(values)


def cmd_compare(args, cfg):
    _, readout = _sensor_readout(cfg)
    measured = readout.get(args.sensor)
    sim_path = Path(args.simulated)
    if not sim_path.is_file():
        raise CliError(f"file not found: {sim_path}", field="simulated")
    sim = _simulated_series(sim_path, args.point or args.sensor)
    rep = ingest.compare(measured, sim, min_overlap=args.min_overlap)
    out = cfg["out"]
    d = rep.to_dict()
    d["sensor"] = args.sensor
    write_json(out / f"compare_{args.sensor}.json", d)
    return d


def cmd_config_schema(args, cfg):
    return CONFIG_SCHEMA


# -- parser -----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail(CliError(message))


def _common(p):
    g = p.add_argument_group("inputs and settings")
    g.add_argument("--config", help="JSON run configuration (see config-schema)")
    g.add_argument("--geometry", help="cross-section geometry JSON")
    g.add_argument("--materials", help="material table JSON")
    g.add_argument("--mesh", help="precomputed mesh JSON (skips meshing)")
    g.add_argument("--tide", help="river level CSV (time_iso8601,level_m_od)")
    g.add_argument("--sensors", help="sensor CSV (time_iso8601,sensor_id,quantity,value)")
    g.add_argument("--registry", help="sensor registry JSON [{id, x, y_od}]")
    g.add_argument("--matrix", help="FoS matrix JSON (default: the bundled reference table)")
    g.add_argument("--reference-table", dest="reference_table", help="reference table JSON")
    g.add_argument("--h", type=float, help="target element size in m")
    g.add_argument("--dt", type=float, help="seepage time step in s")
    g.add_argument("--spinup", type=float, help="seconds of tide ignored before picking phases")
    g.add_argument("--t0", help="window start (ISO 8601)")
    g.add_argument("--t1", help="window end (ISO 8601)")
    g.add_argument("--gamma-w-mode", dest="gamma_w_mode", choices=["standard", "rounded"],
                   help="unit weight of water: 9.81 (standard) or 10 (rounded) kN/m^3")
    g.add_argument("--srf-tol", dest="srf_tol", type=float, help="bisection tolerance on SRF")
    g.add_argument("--newton-tol", dest="newton_tol", type=float, help="relative residual tolerance")
    g.add_argument("--slices", dest="n_slices", type=int, help="number of Bishop slices")
    g.add_argument("--min-depth", dest="min_depth", type=float,
                   help="reject slip circles shallower than this (m)")
    g.add_argument("--snapshot-every", dest="snapshot_every", type=int,
                   help="write a pressure snapshot every N steps (0: final only)")
    g.add_argument("--strict-seepage-face", dest="strict_seepage_face", action="store_const",
                   const=True, help="hold p = 0 on the dry river face only where water leaves")
    g.add_argument("--out-dir", dest="out_dir", help="output directory (env LEVEE_OUTPUT_DIR)")
    g.add_argument("--workers", type=int, help="worker processes (env LEVEE_WORKERS)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="levee", description="Levee seepage and slope-stability analysis.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        _common(p)
        p.set_defaults(func=fn)
        return p

    add("mesh", cmd_mesh, "triangulate the cross-section")
    add("seep", cmd_seep, "tidal seepage run with virtual sensors")
    p = add("mech", cmd_mech, "gravity stage and tidal load increment")
    p.add_argument("--phase", choices=[*PHASES, "both"], default="both",
                   help="tidal phase to load (default: both)")
    p = add("srf", cmd_srf, "strength reduction factor at low and/or high tide")
    p.add_argument("--phase", choices=[*PHASES, "both"], default="both",
                   help="tidal phase to analyse (default: both)")
    p.add_argument("--bracket", dest="srf_bracket", type=lambda s: _pair(s, 2, field="bracket"),
                   help="initial bracket LO,HI")
    p = add("lem", cmd_lem, "critical Bishop circle for one river/ground water level pair")
    p.add_argument("--rl", type=float, required=True, help="river level, m OD")
    p.add_argument("--gwl", type=float, required=True, help="land-side water level, m OD")
    p.add_argument("--grid", dest="lem_grid", type=lambda s: _pair(s, 3, int, "grid"),
                   help="search grid resolution NX,NY,NR")

    tp = sub.add_parser("table", help="FoS look-up table")
    tsub = tp.add_subparsers(dest="table_command", required=True, parser_class=_Parser)
    p = tsub.add_parser("build", help="compute the FoS matrix")
    _common(p)
    p.set_defaults(func=cmd_table_build)
    p.add_argument("--rl-grid", default="-1.1,0,2,4", help="river levels, comma separated")
    p.add_argument("--gwl-grid", default="0,2,4,6", help="water levels, comma separated")
    p.add_argument("--grid", dest="lem_grid", type=lambda s: _pair(s, 3, int, "grid"),
                   help="search grid resolution NX,NY,NR")
    p = tsub.add_parser("query", help="interpolate the FoS matrix")
    _common(p)
    p.set_defaults(func=cmd_table_query)
    p.add_argument("--rl", type=float, required=True, help="river level, m OD")
    p.add_argument("--gwl", type=float, required=True, help="land-side water level, m OD")
    p = tsub.add_parser("query-sensors", help="FoS from river and piezometer records at a time")
    _common(p)
    p.set_defaults(func=cmd_table_query_sensors)
    p.add_argument("--at", required=True, help="query time (ISO 8601)")
    p.add_argument("--piezometer", default="AC2", help="in-dike sensor id")

    p = add("calibrate", cmd_calibrate, "fit one stratum's conductivity to a piezometer")
    p.add_argument("--stratum", default="dark_brown_sand", help="stratum whose K is fitted")
    p.add_argument("--target", default="AC4", help="sensor id to match")
    p.add_argument("--point", help="virtual sensor X,Y (default: registry position)")
    p.add_argument("--bounds", default="1,100", help="K_LO,K_HI in m/day")
    p.add_argument("--tol-decades", dest="tol_decades", type=float, default=0.05,
                   help="stop when the log10 K bracket is this narrow")
    p = add("compare", cmd_compare, "compare a measured sensor with a simulated series")
    p.add_argument("--sensor", required=True, help="measured sensor id")
    p.add_argument("--simulated", required=True, help="virtual_sensors.csv from `seep`")
    p.add_argument("--point", help="simulated point id (default: same as --sensor)")
    p.add_argument("--min-overlap", dest="min_overlap", type=float, default=ingest.M2_PERIOD,
                   help="shortest accepted common window in s (default: one M2 period)")
    p = sub.add_parser("config-schema", help="print the JSON schema accepted by --config")
    p.set_defaults(func=cmd_config_schema)
    return ap


def _fail(exc: CliError):
    err = {"error": exc.kind, "message": str(exc)}
    if exc.field:
        err["field"] = exc.field
    err.update(exc.extra)
    sys.stderr.write(dumps(err, indent=0).replace("\n", "") + "\n")
    raise SystemExit(exc.code)


def _translate(exc: Exception) -> CliError:
    if isinstance(exc, CliError):
        return exc
    if isinstance(exc, (lookup.OutOfRange,)):
        return RangeError(str(exc), field=exc.axis)
    if isinstance(exc, TimeOutOfRange):
        return RangeError(str(exc), field="time")
    if isinstance(exc, (NonConvergence, NonlinearDivergence, StepFailure, BracketError,
                        lem.NoValidCircle, ingest.NoOverlap)):
        cls = CliError if isinstance(exc, ingest.NoOverlap) else SolverError
        return cls(str(exc), exception=type(exc).__name__)
    if isinstance(exc, (GeometryError, ParseError, ValidationError, MaterialError,
                        ingest.IngestError, lookup.TableError, ValueError, KeyError, OSError)):
        return CliError(str(exc), exception=type(exc).__name__)
    raise exc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args) if args.func is not cmd_config_schema else {}
        result = args.func(args, cfg)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        _fail(_translate(exc))
    text = dumps(result)
    sys.stdout.write(text + "\n")
    if cfg:
        name = args.command if args.command != "table" else f"table_{args.table_command}"
        (cfg["out"] / f"{name.replace('-', '_')}.json").write_text(text + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
