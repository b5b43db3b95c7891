"""Flat binary container for named float64 arrays, plus the problem-file layer.

Byte layout (all integers little-endian, all floats IEEE-754 binary64
little-endian):

    offset  size        field
    0       8           magic: ASCII "LADMMBIN"
    8       4           format version, uint32 (currently 1)
    12      4           entry count N, uint32
    --- repeated N times ---
            2           name length L, uint16
            L           entry name, UTF-8
            1           ndim, uint8
            8 * ndim    shape, uint64 each
            8 * prod    array data, float64, C (row-major) order

Scalars are stored as 0-d arrays.  The container is self-describing and
round-trips bit-exactly; the same layout backs both problem files (*.qpf)
and solver checkpoints (*.ckpt).

A problem file holds entries ``format_version``, ``n``, ``m``, ``dense``,
``p``, ``l``, ``u`` and either dense ``Q``/``A`` (row-major) or coordinate
triplets ``Q_rows``/``Q_cols``/``Q_vals`` and ``A_rows``/``A_cols``/
``A_vals`` (densified on load).  Infinite bounds are IEEE infinities.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .problem import BoxQp, ValidationError

MAGIC = b"LADMMBIN"
CONTAINER_VERSION = 1
PROBLEM_FORMAT_VERSION = 1


class FormatError(ValueError):
    """Malformed container or problem file."""


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", CONTAINER_VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        chunks.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_arrays(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, count = struct.unpack_from("<II", raw, 8)
    if version != CONTAINER_VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    pos = 16
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", raw, pos) if ndim else ()
        pos += 8 * ndim
        n_items = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n_items, offset=pos).reshape(shape)
        pos += 8 * n_items
        out[name] = arr.copy()
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return out


def _to_triplets(M: np.ndarray):
    rows, cols = np.nonzero(M)
    return rows.astype(np.float64), cols.astype(np.float64), M[rows, cols]


def _from_triplets(rows, cols, vals, shape):
    M = np.zeros(shape)
    M[rows.astype(np.intp), cols.astype(np.intp)] = vals
    return M


def save_problem(path, prob: BoxQp, sparse: bool = False) -> None:
    entries: dict[str, np.ndarray] = {
        "format_version": np.float64(PROBLEM_FORMAT_VERSION),
        "n": np.float64(prob.n),
        "m": np.float64(prob.m),
        "dense": np.float64(0.0 if sparse else 1.0),
        "p": prob.p,
        "l": prob.l,
        "u": prob.u,
    }
    if sparse:
        for prefix, M in (("Q", prob.Q), ("A", prob.A)):
            rows, cols, vals = _to_triplets(M)
            entries[f"{prefix}_rows"] = rows
            entries[f"{prefix}_cols"] = cols
            entries[f"{prefix}_vals"] = vals
    else:
        entries["Q"] = prob.Q
        entries["A"] = prob.A
    save_arrays(path, entries)


def load_problem(path, validate: bool = True) -> BoxQp:
    data = load_arrays(path)
    try:
        if int(data["format_version"]) != PROBLEM_FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported problem format version")
        n, m = int(data["n"]), int(data["m"])
        if data["dense"]:
            Q, A = data["Q"], data["A"]
        else:
            Q = _from_triplets(data["Q_rows"], data["Q_cols"], data["Q_vals"], (n, n))
            A = _from_triplets(data["A_rows"], data["A_cols"], data["A_vals"], (m, n))
        return BoxQp.create(Q, data["p"], A, data["l"], data["u"], validate=validate)
    except KeyError as exc:
        raise FormatError(f"{path}: missing entry {exc}") from exc
    except ValidationError:
        raise
