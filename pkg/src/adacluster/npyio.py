"""Strict reader/writer for .npy version 1.0 files holding f32 arrays.

Only little-endian float32, C-order, format version (1, 0) is accepted;
anything else is rejected with a :class:`FormatError` naming the file and
the offending field.  The writer emits the same restricted subset, with
the header padded to a 64-byte boundary.
"""

from __future__ import annotations

import ast
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"\x93NUMPY"


def write_npy(path, arr: np.ndarray) -> None:
    """Write ``arr`` as little-endian f32, C-order, npy v1.0."""
    arr = np.ascontiguousarray(arr, dtype="<f4")
    shape = arr.shape
    header = "{'descr': '<f4', 'fortran_order': False, 'shape': %s, }" % (
        repr(shape) if len(shape) != 1 else "(%d,)" % shape[0]
    )
    # magic(6) + version(2) + hlen(2) + header, padded with spaces to 64n, newline-terminated
    base = len(MAGIC) + 2 + 2
    pad = (-(base + len(header) + 1)) % 64
    header = header + " " * pad + "\n"
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(bytes((1, 0)))
        f.write(struct.pack("<H", len(header)))
        f.write(header.encode("latin1"))
        f.write(arr.tobytes(order="C"))


def read_npy(path) -> np.ndarray:
    """Read a strict f32 npy v1.0 file; reject anything else."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 10 or raw[:6] != MAGIC:
        raise FormatError(f"{path}: bad magic, not an npy file")
    version = (raw[6], raw[7])
    if version != (1, 0):
        raise FormatError(f"{path}: unsupported npy version {version}, need (1, 0)")
    (hlen,) = struct.unpack("<H", raw[8:10])
    header_end = 10 + hlen
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated header")
    try:
        header = ast.literal_eval(raw[10:header_end].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"{path}: unparseable header: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header is not a dict")
    for key in ("descr", "fortran_order", "shape"):
        if key not in header:
            raise FormatError(f"{path}: header missing field '{key}'")
    if header["descr"] != "<f4":
        raise FormatError(f"{path}: descr is {header['descr']!r}, only '<f4' accepted")
    if header["fortran_order"] is not False:
        raise FormatError(f"{path}: fortran_order is {header['fortran_order']!r}, must be False")
    shape = header["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(d, int) and d >= 0 for d in shape):
        raise FormatError(f"{path}: malformed shape {shape!r}")
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    payload = raw[header_end:]
    if len(payload) != 4 * count:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, shape {shape} needs {4 * count}"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
    return np.ascontiguousarray(arr, dtype=np.float32)
