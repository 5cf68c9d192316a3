"""File output: trajectory CSV, raster matrix file and key: value reports, all written atomically."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .raster import BIT_NAMES, RasterResult
from .simulate import TrajectoryLog

CSV_SCHEMA = "backupcbf-trajectory/1"
RASTER_SCHEMA = "backupcbf-raster/1"


def atomic_write(path, data: bytes) -> Path:
    """Write to a temporary file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(v: float) -> str:
    return "nan" if np.isnan(v) else repr(float(v))


def trajectory_csv(log: TrajectoryLog) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {CSV_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*log.columns, "qp_status"])
    for row, st in zip(log.data, log.qp_status):
        w.writerow([*(_fmt(v) for v in row), st])
    return buf.getvalue()


def read_trajectory_csv(path):
    """Inverse of :func:`write_trajectory_csv`: ``(columns, data, statuses)``."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("# schema: "):
            raise ValueError("missing schema line")
        r = csv.reader(fh)
        header = next(r)
        rows = list(r)
    data = np.array([[float(v) for v in row[:-1]] for row in rows]).reshape(-1, len(header) - 1)
    return header[:-1], data, [row[-1] for row in rows]


def write_trajectory_csv(log: TrajectoryLog, path) -> Path:
    return atomic_write(path, trajectory_csv(log).encode("utf-8"))


def report_text(pairs) -> str:
    """``key: value`` lines from a mapping or an iterable of preformatted lines."""
    if isinstance(pairs, dict):
        lines = [f"{k}: {v}" for k, v in pairs.items()]
    else:
        lines = list(pairs)
    return "\n".join(lines) + "\n"


def write_report(pairs, path) -> Path:
    return atomic_write(path, report_text(pairs).encode("utf-8"))


def write_raster(result: RasterResult, T: float, path) -> Path:
    """JSON header line, then ``ny * nx`` label bytes in row-major order (rows follow y)."""
    g = result.grid
    header = {
        "schema": RASTER_SCHEMA,
        "nx": g.nx,
        "ny": g.ny,
        "x_range": list(map(float, g.x_range)),
        "y_range": None if g.y_range is None else list(map(float, g.y_range)),
        "dims": list(g.dims),
        "horizon": float(T),
        "d_theta": result.d_theta,
        "bits": BIT_NAMES,
    }
    body = np.ascontiguousarray(result.flags[T], dtype=np.uint8).tobytes()
    return atomic_write(path, (json.dumps(header) + "\n").encode("utf-8") + body)


def read_raster(path):
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    flags = np.frombuffer(raw[nl + 1:], dtype=np.uint8).reshape(header["ny"], header["nx"])
    return header, flags
