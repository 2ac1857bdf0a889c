"""On-disk formats: MFLD field snapshots, norm-series CSV, JSON documents, trajectory archives.

MFLD layout (all little-endian)::

    magic   4 bytes  b"MFLD"
    version u16      currently 1
    dim     u16      spatial dimension
    N       u32      points per axis
    role    u8       0 generic, 1 velocity, 2 director
    data    float64  physical samples, component-major, row-major spatial order

The component count follows from the payload size.  The box period is not
stored; readers assume 2*pi unless told otherwise.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .fields import ROLES, VectorField
from .solver import Trajectory
from .spectral import TWO_PI, SpectralGrid

MAGIC = b"MFLD"
VERSION = 1
HEADER = struct.Struct("<4sHHIB")
CSV_COLUMNS = ("t", "sup_u", "sup_grad_d", "dev_unit", "div_res")


class SnapshotFormatError(ValueError):
    pass


class UnsupportedVersionError(SnapshotFormatError):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temporary sibling, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# -- snapshots -------------------------------------------------------------


def encode_snapshot(field: VectorField) -> bytes:
    grid = field.grid
    header = HEADER.pack(MAGIC, VERSION, grid.dimension, grid.modes_per_axis, ROLES.index(field.role))
    data = np.ascontiguousarray(field.values, dtype="<f8")
    return header + data.tobytes()


def decode_snapshot(blob: bytes, period: float = TWO_PI) -> VectorField:
    if len(blob) < HEADER.size:
        raise SnapshotFormatError("truncated snapshot: header incomplete")
    magic, version, dim, N, role = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version > VERSION:
        raise UnsupportedVersionError(f"snapshot version {version} is newer than supported version {VERSION}")
    if version < 1:
        raise SnapshotFormatError(f"invalid snapshot version {version}")
    if role >= len(ROLES):
        raise SnapshotFormatError(f"unknown role code {role}")
    grid = SpectralGrid(dim, N, period)
    payload = blob[HEADER.size :]
    per_comp = 8 * grid.npoints
    if len(payload) == 0 or len(payload) % per_comp:
        raise SnapshotFormatError(
            f"truncated snapshot: payload of {len(payload)} bytes is not a whole number of "
            f"{per_comp}-byte components"
        )
    ncomp = len(payload) // per_comp
    values = np.frombuffer(payload, dtype="<f8").astype(float).reshape((ncomp,) + grid.shape)
    if ncomp == 1 and ROLES[role] == "generic":
        values = values[0]
    return VectorField.from_values(grid, values, ROLES[role])


def write_snapshot(field: VectorField, path) -> None:
    atomic_write_bytes(path, encode_snapshot(field))


def read_snapshot(path, period: float = TWO_PI) -> VectorField:
    return decode_snapshot(Path(path).read_bytes(), period)


# -- tables and documents -------------------------------------------------


def norm_series_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def write_norm_series(rows, path) -> None:
    atomic_write_text(path, norm_series_csv(rows))


def read_norm_series(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    return {c: np.array([float(r[c]) for r in rows]) for c in CSV_COLUMNS}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(doc: dict, path) -> None:
    atomic_write_text(path, json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# -- trajectories -----------------------------------------------------------


def save_trajectory(traj: Trajectory, path) -> None:
    buf = io.BytesIO()
    np.savez_compressed(
        buf,
        dimension=traj.grid.dimension,
        modes_per_axis=traj.grid.modes_per_axis,
        period=traj.grid.period,
        times=traj.times,
        u_hat=traj.u_hat,
        d_hat=traj.d_hat,
        breaks=np.asarray(traj.breaks, dtype=int),
        blowup=traj.blowup,
    )
    atomic_write_bytes(path, buf.getvalue())


def load_trajectory(path) -> Trajectory:
    with np.load(path) as z:
        grid = SpectralGrid(int(z["dimension"]), int(z["modes_per_axis"]), float(z["period"]))
        return Trajectory(
            grid,
            z["times"].copy(),
            z["u_hat"].copy(),
            z["d_hat"].copy(),
            tuple(int(b) for b in z["breaks"]),
            (),
            bool(z["blowup"]),
        )
