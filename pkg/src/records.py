"""
CSV record files: per-step metrics, particle dumps and pose logs.

Headers are fixed; loaders reject any other column order. Row numbers in
errors are file line numbers, so the header is line 1.
"""
import math

import numpy as np

from src.errors import PoseLogError, RecordFormatError
from src.file_utils import read_csv, write_csv
from src.sim import MetricsLog, PoseRecord

METRICS_HEADER = ("step", "true_x", "true_y", "est_x", "est_y", "error", "ess", "resampled",
                  "rms_dispersion", "std_x", "std_y")
PARTICLES_HEADER = ("step", "index", "x", "y", "weight")
POSE_LOG_HEADER = ("step", "timestamp", "x", "y", "heading", "dx", "dy", "dpsi")


def _read(path, expected, error=RecordFormatError):
    header, rows = read_csv(path)
    if header is None or tuple(header) != expected:
        raise error(path, 1, f"expected header {','.join(expected)}, got {header}")
    for line, row in rows:
        if len(row) != len(expected):
            raise error(path, line, f"expected {len(expected)} fields, got {len(row)}")
    return rows


def _number(path, line, text, kind=float, error=RecordFormatError, optional=False):
    if optional and text == "":
        return None
    try:
        value = kind(text)
    except ValueError:
        raise error(path, line, f"{text!r} is not a valid {kind.__name__}") from None
    if kind is float and not math.isfinite(value):
        raise error(path, line, f"{text!r} is not finite")
    return value


def write_metrics(log, path):
    write_csv(path, METRICS_HEADER, log.rows())


def load_metrics(path, n_particles=0, convergence_radius=60.0, collapse_fraction=0.01):
    """Reads a metrics file back into a MetricsLog; the error column is recomputed, not read."""
    rows = _read(path, METRICS_HEADER)
    values = np.zeros((len(rows), len(METRICS_HEADER)))
    for i, (line, row) in enumerate(rows):
        if _number(path, line, row[0], int) != i:
            raise RecordFormatError(path, line, f"expected step {i}, got {row[0]}")
        if row[7] not in ("0", "1"):
            raise RecordFormatError(path, line, f"resampled must be 0 or 1, got {row[7]!r}")
        values[i] = [_number(path, line, cell) for cell in row]
    return MetricsLog(true_xy=values[:, 1:3], est_xy=values[:, 3:5], ess=values[:, 6],
                      resampled=values[:, 7] == 1.0, rms=values[:, 8], std=values[:, 9:11],
                      n_particles=n_particles, convergence_radius=convergence_radius,
                      collapse_fraction=collapse_fraction)


def write_particles(particle_set, step, path):
    rows = ((step, i, x, y, w) for i, (x, y, w) in enumerate(particle_set))
    write_csv(path, PARTICLES_HEADER, rows)


def load_particles(path):
    """Returns (step, xy, weights) from a particle dump of a single step."""
    rows = _read(path, PARTICLES_HEADER)
    steps = {row[0] for _, row in rows}
    if len(steps) > 1:
        raise RecordFormatError(path, rows[0][0], f"dump mixes steps {sorted(steps)}")
    xy = np.array([[_number(path, line, row[2]), _number(path, line, row[3])]
                   for line, row in rows]).reshape(-1, 2)
    weights = np.array([_number(path, line, row[4]) for line, row in rows])
    step = _number(path, rows[0][0], rows[0][1][0], int) if rows else None
    return step, xy, weights


def write_pose_log(records, path):
    write_csv(path, POSE_LOG_HEADER, records)


def load_pose_log(path):
    """Parsed pose records; steps must strictly increase. A header-only file is an empty log."""
    rows = _read(path, POSE_LOG_HEADER, PoseLogError)
    records = []
    for line, row in rows:
        step = _number(path, line, row[0], int, PoseLogError)
        if records and step <= records[-1].step:
            raise PoseLogError(path, line, f"step {step} does not follow step {records[-1].step}")
        timestamp = _number(path, line, row[1], float, PoseLogError, optional=True)
        fields = [_number(path, line, cell, float, PoseLogError) for cell in row[2:]]
        records.append(PoseRecord(step, timestamp, *fields))
    return records
