"""Regenerate the synthetic tide, sensor, registry and reference-table
fixtures shipped in levee/data.

The tide is a semi-diurnal signal with a spring-neap envelope whose low
water is truncated near -1.1 m OD (the channel drains no further), tuned to
a mean of about 0.6 m OD and a range of about 6 m.  Piezometer records are
integer mbar readings built around fixed means, so window means are exact.
"""
import json
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

DATA = Path(__file__).resolve().parents[1] / "src" / "levee" / "data"
M2 = 12.4206 * 3600.0
SPRING_NEAP = 14.765 * 86400.0
FLOOR, SOFT = -1.1, 0.12
START = datetime(2012, 1, 9, tzinfo=timezone.utc)


def tide(t, mean):
    amp = 5.2 + 0.3 * np.cos(2 * np.pi * t / SPRING_NEAP)
    raw = mean + amp * np.cos(2 * np.pi * t / M2)
    return FLOOR + SOFT * np.logaddexp(0.0, (raw - FLOOR) / SOFT)


# id, x, elevation (m OD), mean (mbar), tidal amplitude (mbar), lag (h)
SENSORS = [
    ("AC1", 43.0, 3.2, 4, 1, 0.0),
    ("AC2", 43.0, 1.64, 90, 3, 4.0),
    ("AC3", 43.0, -0.8, 275, 20, 2.5),
    ("AC4", 43.0, -3.96, 450, 55, 1.5),
    ("AC5", 43.0, -6.3, 700, 6, 3.0),
    ("AS1", 31.0, 1.64, 70, 50, 1.0),
    ("AS2", 31.0, -0.79, 220, 45, 1.2),
]

# published look-up table: rl, gwl, fos, sensor pressures in kPa (None = atmospheric)
TABLE = [
    (-1.1, 0, 1.55, [None, None, 8, 39, 63, None, 7.94]),
    (0, 0, 1.515, [None, None, 8, 39, 63, None, 7.94]),
    (0, 2, 1.28, [None, 3, 28, 59, 83, 2.94, 27.94]),
    (0, 4, 1.04, [8, 23, 48, 79, 103, 22, 47]),
    (0, 6, 1.04, [28, 43, 68, 99, 123, 22, 47]),
    (2, 0, 1.67, [None, None, 8, 39, 63, None, 7.94]),
    (2, 2, 1.55, [None, 3, 28, 59, 83, 2.94, 27.94]),
    (2, 4, 1.08, [8, 23, 48, 79, 103, 22, 47]),
    (2, 6, 1.08, [28, 43, 68, 99, 123, 22, 47]),
    (4, 0, 2.11, [None, None, 8, 39, 63, None, 7.94]),
    (4, 2, 2.11, [None, 3, 28, 59, 83, 2.94, 27.94]),
    (4, 4, 1.88, [8, 23, 48, 79, 103, 22.94, 47.94]),
    (4, 6, 1.6, [28, 43, 68, 99, 123, 22.94, 47.94]),
]


def stamp(s):
    return (START + timedelta(seconds=float(s))).isoformat().replace("+00:00", "Z")


def integer_record(t, level, mean, amp, lag):
    """Integer readings following the normalised tide with a lag, shifted so
    that their sum is exactly ``mean * len(t)``."""
    norm = (level - level.mean()) / (0.5 * (level.max() - level.min()))
    v = np.rint(mean + amp * np.interp(t - lag * 3600.0, t, norm)).astype(int)
    v -= int(v.sum() - mean * len(v)) // len(v)
    excess = int(v.sum() - mean * len(v))
    v[np.argsort(-np.abs(norm))[:abs(excess)]] -= int(np.sign(excess))
    assert v.sum() == mean * len(v)
    return v


def main():
    t = np.arange(0.0, 5 * 86400.0 + 1.0, 600.0)
    mean = brentq(lambda m: tide(t, m).mean() - 0.6, -2.0, 2.0)
    level = np.round(tide(t, mean), 4)
    with open(DATA / "tide_jan2012.csv", "w") as fh:
        fh.write("time_iso8601,level_m_od\n")
        for s, v in zip(t, level):
            fh.write(f"{stamp(s)},{v:.4f}\n")
    print(f"tide mean {level.mean():.3f} min {level.min():.3f} max {level.max():.3f}")

    registry = [{"id": sid, "x": x, "y_od": y} for sid, x, y, *_ in SENSORS]
    (DATA / "boston_sensors.json").write_text(json.dumps(registry, indent=1) + "\n")

    records = {sid: integer_record(t, level, m, a, lag) for sid, _, _, m, a, lag in SENSORS}
    with open(DATA / "sensors_jan2012.csv", "w") as fh:
        fh.write("time_iso8601,sensor_id,quantity,value\n")
        for i, s in enumerate(t):
            for sid, *_ in SENSORS:
                fh.write(f"{stamp(s)},{sid},pressure_mbar,{records[sid][i]}\n")
            if i % 6 == 0:
                for sid in ("AC2", "AC4"):
                    fh.write(f"{stamp(s)},{sid},temperature_c,{6.5 + 0.1 * (sid == 'AC4'):.1f}\n")
    for sid, rec in records.items():
        print(sid, "mean", rec.mean(), "range", rec.max() - rec.min())

    cells = [{"rl": rl, "gwl": g, "fos": f,
              "pressure_kpa": dict(zip([s[0] for s in SENSORS], p))} for rl, g, f, p in TABLE]
    table = {"name": "Boston section A, Bishop look-up table (reference values)",
             "units": {"rl": "m OD", "gwl": "m OD", "pressure_kpa": "kPa, null = atmospheric"},
             "cells": cells}
    (DATA / "table2.json").write_text(json.dumps(table, indent=1) + "\n")


if __name__ == "__main__":
    main()
