"""Atomic file output: CSV tables, JSON sidecars and binary density-matrix dumps."""

from __future__ import annotations

import csv
import io as _io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

RHO_MAGIC = b"DSRHO001"


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temporary file in the same directory followed by a rename."""
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


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def table_csv(rows, columns=None) -> str:
    rows = list(rows)
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def write_table(path, rows, columns=None) -> None:
    atomic_write_text(path, table_csv(rows, columns))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serialisable: {type(x)}")


def dump_density_matrix(path, rho) -> None:
    """Binary dump: 8-byte magic, little-endian int64 dimension, row-major complex128 entries."""
    rho = np.ascontiguousarray(rho, dtype="<c16")
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density matrix must be square")
    atomic_write_bytes(path, RHO_MAGIC + struct.pack("<q", rho.shape[0]) + rho.tobytes())


def load_density_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != RHO_MAGIC:
        raise ValueError("not a density-matrix dump")
    (d,) = struct.unpack("<q", data[8:16])
    return np.frombuffer(data[16:], dtype="<c16").reshape(d, d).copy()
