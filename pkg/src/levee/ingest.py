"""Piezometer and river series: parsing, unit conversion, water-table
estimates, measured-versus-simulated comparison and conductivity calibration.

Sensor times are POSIX seconds (UTC).  River series from :mod:`levee.seepage`
carry an ``epoch`` and are shifted onto the same clock when compared.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .materials import GAMMA_W, SoilMaterial
from .seepage import HydraulicBC, PressureField, SeepageModel, TideSeries, parse_time

log = logging.getLogger(__name__)

QUANTITIES = {"pressure_mbar": "mbar", "temperature_c": "degC"}
M2_PERIOD = 12.4206 * 3600.0


class IngestError(ValueError):
    pass


class EmptyWindow(IngestError):
    pass


class NoOverlap(IngestError):
    pass


class RegistryMismatch(IngestError):
    pass


class NonMonotonicWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SensorSpec:
    id: str
    x: float
    y_od: float


def load_registry(path) -> dict[str, SensorSpec]:
    """Registry JSON: a list of ``{"id", "x", "y_od"}`` objects."""
    data = json.loads(Path(path).read_text())
    out = {}
    for i, item in enumerate(data):
        try:
            spec = SensorSpec(str(item["id"]), float(item["x"]), float(item["y_od"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestError(f"registry entry {i}: {exc!r}") from None
        if spec.id in out:
            raise IngestError(f"registry: duplicate sensor id {spec.id!r}")
        out[spec.id] = spec
    return out


@dataclass
class SensorSeries:
    sensor_id: str
    elevation: float
    quantity: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.quantity not in QUANTITIES:
            raise IngestError(f"unknown quantity {self.quantity!r}")
        if self.times.ndim != 1 or self.times.shape != self.values.shape:
            raise IngestError("times and values must be matching 1D arrays")
        if np.any(np.diff(self.times) <= 0):
            raise IngestError(f"{self.sensor_id}: times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def window(self) -> tuple[float, float]:
        if not len(self.times):
            raise EmptyWindow(f"{self.sensor_id}: no samples")
        return float(self.times[0]), float(self.times[-1])

    def check_registry(self, registry: dict[str, SensorSpec], tol: float = 1e-9) -> None:
        spec = registry.get(self.sensor_id)
        if spec is None:
            raise RegistryMismatch(f"sensor {self.sensor_id!r} not in registry")
        if abs(spec.y_od - self.elevation) > tol:
            raise RegistryMismatch(
                f"{self.sensor_id}: elevation {self.elevation} != registry {spec.y_od}")

    def select(self, t0: float, t1: float) -> "SensorSeries":
        m = (self.times >= t0) & (self.times <= t1)
        return replace(self, times=self.times[m], values=self.values[m])


@dataclass(frozen=True)
class RowRejection:
    line: int
    reason: str
    raw: str


@dataclass
class SensorReadout:
    """Accepted series keyed by ``(sensor_id, quantity)`` plus the rows that
    were refused, each with its reason."""

    series: dict = field(default_factory=dict)
    rejected: list = field(default_factory=list)

    def get(self, sensor_id: str, quantity: str = "pressure_mbar") -> SensorSeries:
        try:
            return self.series[(sensor_id, quantity)]
        except KeyError:
            raise IngestError(f"no {quantity} samples for sensor {sensor_id!r}") from None

    def report(self) -> list[dict]:
        return [{"line": r.line, "reason": r.reason, "raw": r.raw} for r in self.rejected]


def read_sensor_csv(path, registry: dict[str, SensorSpec]) -> SensorReadout:
    """Parse ``time_iso8601,sensor_id,quantity,value`` rows.

    Rows with missing or unparsable fields, unknown sensors or quantities,
    and timestamps that do not advance for their sensor/quantity pair are
    rejected; nothing is reordered or filled in.
    """
    header = ["time_iso8601", "sensor_id", "quantity", "value"]
    acc: dict[tuple, tuple[list, list]] = {}
    rejected = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or [c.strip() for c in first] != header:
            raise IngestError(f"{path}: expected header {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            raw = ",".join(row)
            if not row or all(not c.strip() for c in row):
                continue
            reason = None
            if len(row) != 4 or any(not c.strip() for c in row):
                reason = "missing field"
            else:
                stamp, sid, qty, val = (c.strip() for c in row)
                try:
                    t = parse_time(stamp).timestamp()
                except ValueError:
                    reason = f"bad timestamp {stamp!r}"
                if reason is None:
                    try:
                        v = float(val)
                    except ValueError:
                        v = math.nan
                    if not math.isfinite(v):
                        reason = f"bad value {val!r}"
                if reason is None and sid not in registry:
                    reason = f"unknown sensor {sid!r}"
                if reason is None and qty not in QUANTITIES:
                    reason = f"unknown quantity {qty!r}"
                if reason is None:
                    ts, vs = acc.setdefault((sid, qty), ([], []))
                    if ts and t <= ts[-1]:
                        reason = "timestamp does not advance"
                    else:
                        ts.append(t)
                        vs.append(v)
            if reason is not None:
                rejected.append(RowRejection(lineno, reason, raw))
    out = SensorReadout(rejected=rejected)
    for (sid, qty), (ts, vs) in sorted(acc.items()):
        out.series[(sid, qty)] = SensorSeries(sid, registry[sid].y_od, qty, ts, vs)
    if rejected:
        log.warning("%s: %d rows rejected", path, len(rejected))
    return out


def write_sensor_csv(series: list[SensorSeries], path) -> None:
    rows = []
    for s in series:
        rows += [(t, s.sensor_id, s.quantity, v) for t, v in zip(s.times, s.values)]
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_iso8601", "sensor_id", "quantity", "value"])
        for t, sid, qty, v in rows:
            w.writerow([_iso(t), sid, qty, repr(float(v))])


def _iso(t: float) -> str:
    from datetime import datetime, timezone
    return datetime.fromtimestamp(t, tz=timezone.utc).isoformat().replace("+00:00", "Z")


def mbar_to_head(p, gamma_w: float = GAMMA_W):
    """Pressure in mbar to metres of water."""
    if not gamma_w > 0:
        raise ValueError("gamma_w must be positive")
    return p * 0.1 / gamma_w


def estimate_gwl(series: SensorSeries, window: tuple[float, float] | None = None,
                 gamma_w: float = GAMMA_W) -> float:
    """Water-table level (m OD) implied by the mean pressure over ``window``."""
    if series.quantity != "pressure_mbar":
        raise IngestError(f"{series.sensor_id}: water table needs a pressure series")
    sel = series if window is None else series.select(*window)
    if len(sel) == 0:
        raise EmptyWindow(f"{series.sensor_id}: no samples in window {window}")
    return series.elevation + mbar_to_head(float(np.mean(sel.values)), gamma_w)


def absolute_times(series) -> np.ndarray:
    """POSIX seconds for a sensor series or an epoch-tagged river series."""
    if isinstance(series, TideSeries):
        off = series.epoch.timestamp() if series.epoch is not None else 0.0
        return series.times + off
    if isinstance(series, SensorSeries):
        return series.times
    return np.asarray(series[0], dtype=float)


def _values(series) -> np.ndarray:
    if isinstance(series, TideSeries):
        return series.levels
    if isinstance(series, SensorSeries):
        return series.values
    return np.asarray(series[1], dtype=float)


@dataclass
class ComparisonReport:
    rmse: float
    bias: float
    amplitude_ratio: float
    mean_measured: float
    mean_simulated: float
    window: tuple[float, float]
    n_samples: int

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "bias": self.bias, "amplitude_ratio": self.amplitude_ratio,
                "mean_measured": self.mean_measured, "mean_simulated": self.mean_simulated,
                "window": list(self.window), "n_samples": self.n_samples}


def _spread(v: np.ndarray) -> float:
    q05, q95 = np.quantile(v, [0.05, 0.95])
    return float(q95 - q05)


def compare(measured, simulated, step: float | None = None,
            min_overlap: float = M2_PERIOD) -> ComparisonReport:
    """Resample both series onto a common uniform grid over their overlap.

    Series may be :class:`SensorSeries`, :class:`TideSeries` or ``(times,
    values)`` pairs.  ``bias`` is simulated minus measured and the amplitude
    ratio is simulated over measured q95-q05 spread.
    """
    tm, vm = absolute_times(measured), _values(measured)
    ts, vs = absolute_times(simulated), _values(simulated)
    if len(tm) < 2 or len(ts) < 2:
        raise NoOverlap("each series needs at least two samples")
    t0, t1 = max(tm[0], ts[0]), min(tm[-1], ts[-1])
    if t1 <= t0 or t1 - t0 < min_overlap:
        raise NoOverlap(f"overlap {max(t1 - t0, 0.0):.0f} s shorter than {min_overlap:.0f} s")
    if step is None:
        step = min(float(np.median(np.diff(tm))), float(np.median(np.diff(ts))))
    n = int(math.floor((t1 - t0) / step + 1e-9)) + 1
    grid = t0 + step * np.arange(n)
    a, b = np.interp(grid, tm, vm), np.interp(grid, ts, vs)
    d = b - a
    sa = _spread(a)
    ratio = _spread(b) / sa if sa > 0 else (1.0 if _spread(b) == 0 else math.inf)
    return ComparisonReport(rmse=float(np.sqrt(np.mean(d * d))), bias=float(np.mean(d)),
                            amplitude_ratio=ratio, mean_measured=float(a.mean()),
                            mean_simulated=float(b.mean()), window=(float(t0), float(grid[-1])),
                            n_samples=n)


# -- calibration ---------------------------------------------------------------

@dataclass
class CalibrationScene:
    """Everything a tidal seepage run needs apart from the trial conductivity.

    The run starts from the steady state at ``steady_level`` (default: mean
    river level over the window) and marches from ``t0`` to ``t1`` in the
    river series' own clock.
    """

    mesh: object
    materials: dict[str, SoilMaterial]
    river: TideSeries
    land_heads: dict[str, float]
    t0: float | None = None
    t1: float | None = None
    dt: float = 600.0
    gamma_w: float = GAMMA_W
    steady_level: float | None = None
    order: int = 2
    strict_seepage_face: bool = False

    def window(self) -> tuple[float, float]:
        lo, hi = self.river.window
        return (lo if self.t0 is None else self.t0, hi if self.t1 is None else self.t1)


def simulate_point(scene: CalibrationScene, point: tuple[float, float],
                   materials: dict[str, SoilMaterial] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Virtual piezometer record (POSIX seconds, mbar) at ``point``."""
    mats = materials if materials is not None else scene.materials
    model = SeepageModel(scene.mesh, mats, gamma_w=scene.gamma_w, order=scene.order,
                         strict_seepage_face=scene.strict_seepage_face)
    t0, t1 = scene.window()
    level = scene.steady_level
    if level is None:
        m = (scene.river.times >= t0) & (scene.river.times <= t1)
        level = float(scene.river.levels[m].mean())
    steady = model.steady_state(HydraulicBC(TideSeries.constant(level), dict(scene.land_heads),
                                            scene.gamma_w))
    init = PressureField(t0, steady.p.copy(), steady.saturation, steady.kr, steady.flux)
    bc = HydraulicBC(scene.river, dict(scene.land_heads), scene.gamma_w)
    run = model.run_tidal(bc, t0, t1, scene.dt, sensors={"probe": tuple(point)}, initial=init)
    off = scene.river.epoch.timestamp() if scene.river.epoch is not None else 0.0
    return np.asarray(run.times) + off, run.series("probe", "mbar")


@dataclass
class CalibrationResult:
    stratum: str
    k: float
    rmse: float | None
    curve: list = field(default_factory=list)        # (K, rmse) in evaluation order
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"stratum": self.stratum, "k": self.k, "rmse": self.rmse,
                "curve": [{"k": k, "rmse": r} for k, r in self.curve],
                "warnings": list(self.warnings)}


def _local_minima(values: list[float]) -> int:
    v = np.asarray(values)
    n = 0
    for i in range(len(v)):
        left = v[i - 1] if i > 0 else np.inf
        right = v[i + 1] if i < len(v) - 1 else np.inf
        if v[i] < left and v[i] <= right:
            n += 1
    return n


def calibrate_conductivity(scene: CalibrationScene, stratum: str, target: SensorSeries,
                           point: tuple[float, float], bounds: tuple[float, float],
                           tol_decades: float = 0.05, n_scan: int = 8,
                           min_overlap: float = M2_PERIOD) -> CalibrationResult:
    """Fit one stratum's saturated conductivity (m/day) to a piezometer record.

    A log-spaced scan brackets the best value, then golden-section search on
    log10 K narrows the bracket to ``tol_decades``.  The returned K is the
    best of all evaluated trials, so it never scores worse than either bound.
    """
    k_lo, k_hi = map(float, bounds)
    if not (k_lo > 0 and k_hi > 0) or k_lo > k_hi:
        raise ValueError(f"bounds must be positive and ordered, got {bounds}")
    if stratum not in scene.materials:
        raise KeyError(f"unknown stratum {stratum!r}")
    if k_lo == k_hi:
        return CalibrationResult(stratum, k_lo, None)
    if n_scan < 3:
        raise ValueError("n_scan must be at least 3")
    seen: dict[float, float] = {}
    curve = []

    def objective(logk: float) -> float:
        if logk in seen:
            return seen[logk]
        k = 10.0 ** logk
        mats = dict(scene.materials)
        mats[stratum] = replace(mats[stratum], hydraulic_conductivity=k)
        sim = simulate_point(scene, point, mats)
        r = compare(target, sim, min_overlap=min_overlap).rmse
        seen[logk] = r
        curve.append((k, r))
        log.info("calibration K=%.5g m/day rmse=%.5g", k, r)
        return r

    a, b = math.log10(k_lo), math.log10(k_hi)
    scan = np.linspace(a, b, n_scan)
    vals = [objective(float(x)) for x in scan]
    notes = []
    if _local_minima(vals) > 1:
        msg = f"rmse over the coarse scan has {_local_minima(vals)} local minima"
        warnings.warn(msg, NonMonotonicWarning, stacklevel=2)
        notes.append(msg)
    i = int(np.argmin(vals))
    lo, hi = float(scan[max(i - 1, 0)]), float(scan[min(i + 1, n_scan - 1)])
    g = (math.sqrt(5.0) - 1.0) / 2.0
    x1, x2 = hi - g * (hi - lo), lo + g * (hi - lo)
    f1, f2 = objective(x1), objective(x2)
    while hi - lo > tol_decades:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - g * (hi - lo)
            f1 = objective(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + g * (hi - lo)
            f2 = objective(x2)
    best = min(seen, key=lambda x: (seen[x], x))
    return CalibrationResult(stratum, 10.0 ** best, seen[best], curve, notes)
