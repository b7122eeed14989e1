"""Matrix file formats and atomic file writes.

CSV: one matrix row per line, comma-separated decimals, no header.

Binary: ``b"L1NS"``, version (u32), rows (u64), cols (u64), then
rows*cols float64, all little-endian, row-major.
"""
import io
import os
import struct
import tempfile

import numpy as np

from .core import as_matrix

MAGIC = b"L1NS"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


class FormatError(ValueError):
    pass


def matrix_to_bytes(M) -> bytes:
    M = as_matrix(M)
    rows, cols = M.shape
    return _HEADER.pack(MAGIC, VERSION, rows, cols) + np.ascontiguousarray(M, dtype="<f8").tobytes()


def read_matrix_stream(f) -> np.ndarray:
    head = f.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise FormatError("truncated matrix header")
    magic, version, rows, cols = _HEADER.unpack(head)
    if magic != MAGIC:
        raise FormatError(f"bad matrix magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported matrix format version {version}")
    nbytes = rows * cols * 8
    data = f.read(nbytes)
    if len(data) != nbytes:
        raise FormatError(f"truncated matrix data: expected {nbytes} bytes, got {len(data)}")
    M = np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(rows, cols)
    if not np.isfinite(M).all():
        raise FormatError("matrix has non-finite entries")
    return M


def matrix_from_bytes(data: bytes) -> np.ndarray:
    return read_matrix_stream(io.BytesIO(data))


def matrix_to_csv(M) -> str:
    M = as_matrix(M)
    return "".join(",".join(repr(float(x)) for x in row) + "\n" for row in M)


def matrix_from_csv(text: str) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            rows.append([float(tok) for tok in line.split(",")])
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
    if not rows:
        raise FormatError("empty CSV matrix")
    width = len(rows[0])
    for i, row in enumerate(rows, 1):
        if len(row) != width:
            raise FormatError(f"ragged CSV: row {i} has {len(row)} columns, expected {width}")
    M = np.array(rows, dtype=np.float64)
    if not np.isfinite(M).all():
        raise FormatError("matrix has non-finite entries")
    return M


def atomic_write(path, data):
    """Write ``data`` (bytes or str) to ``path`` via a temp file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_matrix(path, M):
    """Save as CSV if the path ends in ``.csv``, binary otherwise."""
    if os.fspath(path).endswith(".csv"):
        atomic_write(path, matrix_to_csv(M))
    else:
        atomic_write(path, matrix_to_bytes(M))


def load_matrix(path) -> np.ndarray:
    """Load a matrix, detecting the binary format by its magic bytes."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] == MAGIC:
        return matrix_from_bytes(data)
    return matrix_from_csv(data.decode("utf-8"))


COLLECTION_MAGIC = b"L1NSCOL"
_COL_HEADER = struct.Struct("<7sIQQQ")


def collection_to_bytes(collection) -> bytes:
    """``b"L1NSCOL"``, version (u32), n, D, r (u64), then n bases in binary matrix format."""
    head = _COL_HEADER.pack(COLLECTION_MAGIC, VERSION, collection.n, collection.ambient_dim, collection.rank)
    return head + b"".join(matrix_to_bytes(s.basis) for s in collection.models)


def collection_from_bytes(data: bytes):
    from .core import SubspaceCollection

    f = io.BytesIO(data)
    head = f.read(_COL_HEADER.size)
    if len(head) != _COL_HEADER.size:
        raise FormatError("truncated collection header")
    magic, version, n, D, r = _COL_HEADER.unpack(head)
    if magic != COLLECTION_MAGIC:
        raise FormatError(f"bad collection magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported collection version {version}")
    bases = [read_matrix_stream(f) for _ in range(n)]
    for i, b in enumerate(bases):
        if b.shape != (D, r):
            raise FormatError(f"basis {i} has shape {b.shape}, expected {(D, r)}")
    return SubspaceCollection.from_bases(bases)
