"""Bring primitives to a common length and scale before clustering.

Samples are kept time-major, shape ``(l, 6)``: row ``a`` is the 6-vector at
resampled time ``a``. ``flatten`` of such a sample is ``sample.ravel()``, so
flat index ``6 * a + d`` holds dimension ``d`` at time ``a``.

The prepared matrix can be stored as CSV (``primitive_id`` then ``6l``
columns) or in a packed little-endian binary::

    offset  type        content
    0       4 bytes     magic b"LCPM"
    4       uint32      format version (1)
    8       uint32      number of rows n
    12      uint32      number of value columns c (= 6 * l)
    16      n records   int64 primitive id, then c float64 values
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import SchemaError, ValidationError

DEFAULT_LENGTH = 75
_MAGIC = b"LCPM"
_HEADER = struct.Struct("<4sIII")


def resample(points, length: int = DEFAULT_LENGTH) -> np.ndarray:
    """Linear interpolation of every dimension onto ``length`` equally spaced times.

    The new grid spans the original time extent, so the first and last
    samples are reproduced exactly.
    """
    P = np.asarray(getattr(points, "points", points), dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    n = len(P)
    if n < 2:
        raise ValidationError("cannot interpolate a primitive shorter than 2 frames")
    if length < 2:
        raise ValidationError("target length must be >= 2")
    t_old = np.arange(n, dtype=np.float64)
    t_new = np.linspace(0.0, n - 1, length)
    out = np.column_stack([np.interp(t_new, t_old, P[:, k]) for k in range(P.shape[1])])
    out[0], out[-1] = P[0], P[-1]
    return out


def normalize(sample) -> np.ndarray:
    """Min-max scale each dimension to ``[-1, 1]``; constant dimensions become 0."""
    S = np.asarray(sample, dtype=np.float64)
    lo, hi = S.min(axis=0), S.max(axis=0)
    span = hi - lo
    out = np.zeros_like(S)
    live = span > 0
    out[:, live] = 2.0 * (S[:, live] - lo[live]) / span[live] - 1.0
    return out


def flatten(sample) -> np.ndarray:
    return np.ascontiguousarray(sample, dtype=np.float64).ravel()


def unflatten(flat, n_dims: int = 6) -> np.ndarray:
    flat = np.asarray(flat, dtype=np.float64)
    if flat.size % n_dims:
        raise ValidationError(f"flat length {flat.size} is not a multiple of {n_dims}")
    return flat.reshape(-1, n_dims)


def prepare(primitives: Sequence, length: int = DEFAULT_LENGTH) -> np.ndarray:
    """Resample and normalize a batch; returns ``(n, length, 6)``."""
    if not len(primitives):
        return np.empty((0, length, 6))
    return np.stack([normalize(resample(p, length)) for p in primitives])


def write_matrix_csv(ids: Sequence[int], samples: np.ndarray, path) -> Path:
    path = Path(path)
    samples = np.asarray(samples, dtype=np.float64)
    flat = samples.reshape(len(samples), int(np.prod(samples.shape[1:])))
    cols = [f"v{i}" for i in range(flat.shape[1])]
    df = pd.DataFrame(flat, columns=cols)
    df.insert(0, "primitive_id", np.asarray(ids, dtype=np.int64))
    df.to_csv(path, index=False)
    return path


def read_matrix_csv(path, n_dims: int = 6) -> tuple[np.ndarray, np.ndarray]:
    df = pd.read_csv(path, float_precision="round_trip")
    if "primitive_id" not in df.columns:
        raise SchemaError(f"{path}: missing column 'primitive_id'")
    ids = df["primitive_id"].to_numpy(dtype=np.int64)
    flat = df.drop(columns="primitive_id").to_numpy(dtype=np.float64)
    return ids, flat.reshape(len(flat), flat.shape[1] // n_dims, n_dims)


def write_matrix_bin(ids: Sequence[int], samples: np.ndarray, path) -> Path:
    path = Path(path)
    samples = np.asarray(samples, dtype=np.float64)
    n = len(samples)
    c = int(np.prod(samples.shape[1:])) if samples.ndim > 1 else 0
    rec = np.empty(n, dtype=np.dtype([("id", "<i8"), ("v", "<f8", (c,))]))
    rec["id"] = np.asarray(ids, dtype=np.int64)
    rec["v"] = samples.reshape(n, c)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, n, c))
        fh.write(rec.tobytes())
    return path


def read_matrix_bin(path, n_dims: int = 6) -> tuple[np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    magic, version, n, c = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC or version != 1:
        raise SchemaError(f"{path}: not a prepared-primitive matrix (v1)")
    rec = np.frombuffer(raw, dtype=np.dtype([("id", "<i8"), ("v", "<f8", (c,))]),
                        count=n, offset=_HEADER.size)
    return rec["id"].astype(np.int64), rec["v"].reshape(n, c // n_dims, n_dims).astype(np.float64)
