"""Dictionary and dataset persistence: column-major CSV and a small binary format.

CSV: one line per column (atom), values printed with 17 significant digits so
float64 round-trips exactly.  Binary: the 8-byte magic ``MFCMAT01``, two
little-endian uint32 dimensions (rows, columns), then the entries as
little-endian float64 in column-major order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ContractError

MAGIC = b"MFCMAT01"
_HEADER = struct.Struct("<8sII")


def to_csv_text(M: np.ndarray) -> str:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ContractError("expected a 2-D matrix")
    return "".join(",".join(format(v, ".17g") for v in col) + "\n" for col in M.T)


def from_csv_text(text: str, rows: int | None = None) -> np.ndarray:
    cols = [[float(v) for v in line.split(",")] for line in text.splitlines() if line.strip()]
    if not cols:
        raise ContractError("empty matrix file")
    if len({len(c) for c in cols}) != 1:
        raise ContractError("ragged CSV: every line must hold one full column")
    M = np.array(cols, dtype=float).T
    if rows is not None and M.shape[0] != rows:
        raise ContractError(f"expected {rows} rows, found {M.shape[0]}")
    return M


def to_bytes(M: np.ndarray) -> bytes:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ContractError("expected a 2-D matrix")
    return _HEADER.pack(MAGIC, M.shape[0], M.shape[1]) + M.astype("<f8").tobytes(order="F")


def from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise ContractError("truncated matrix header")
    magic, rows, cols = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ContractError("not a matrix file (bad magic)")
    body = blob[_HEADER.size :]
    if len(body) != 8 * rows * cols:
        raise ContractError(f"expected {8 * rows * cols} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f8").reshape((rows, cols), order="F").astype(float)


def save(path, M: np.ndarray) -> None:
    """Write ``M``; the suffix ``.csv`` selects CSV, anything else the binary format."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        path.write_text(to_csv_text(M))
    else:
        path.write_bytes(to_bytes(M))


def load(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return from_csv_text(path.read_text())
    return from_bytes(path.read_bytes())
