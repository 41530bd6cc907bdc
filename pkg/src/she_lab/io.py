"""Binary and CSV persistence for noise sheets and trajectories.

Binary layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON
header, then the payload as row-major little-endian float64.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError


def write_blob(path, magic: bytes, header: dict, array: np.ndarray) -> Path:
    path = Path(path)
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        fh.write(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return path


def read_blob(path, magic: bytes) -> tuple[dict, np.ndarray]:
    data = Path(path).read_bytes()
    if data[: len(magic)] != magic:
        raise ConfigError(f"{path}: not a {magic.decode()} file")
    off = len(magic)
    (n,) = struct.unpack_from("<Q", data, off)
    off += 8
    header = json.loads(data[off : off + n].decode("utf-8"))
    payload = np.frombuffer(data, dtype="<f8", offset=off + n).astype(float)
    return header, payload


def write_trajectory_csv(traj, path) -> Path:
    """Long format: one ``t,x,u`` row per recorded grid point."""
    path = Path(path)
    x = traj.lattice.x
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "u"])
        for t, row in zip(traj.times, traj.values):
            for xj, uj in zip(x, row):
                w.writerow([repr(float(t)), repr(float(xj)), repr(float(uj))])
    return path


def write_series_csv(path, columns: dict) -> Path:
    path = Path(path)
    names = list(columns)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*(columns[n] for n in names)):
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def read_series_csv(path) -> dict:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    names, body = rows[0], rows[1:]
    out = {}
    for k, name in enumerate(names):
        col = [r[k] for r in body]
        try:
            out[name] = [float(v) for v in col]
        except ValueError:
            out[name] = col
    return out
