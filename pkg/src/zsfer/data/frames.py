"""Binary per-frame feature files.

Layout (little-endian)::

    magic   4 bytes  b"ZSFF"
    version u16      1
    dtype   u8       1 = float64
    pad     u8       0
    t_raw   u64      number of frames
    dim     u64      features per frame
    payload t_raw * dim float64, row-major
    crc32   u32      over every preceding byte
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import CorruptPayload, UnresolvedSource

MAGIC = b"ZSFF"
VERSION = 1
_HEADER = struct.Struct("<4sHBBQQ")


def encode_frames_file(frames) -> bytes:
    arr = np.ascontiguousarray(frames, dtype="<f8")
    if arr.ndim != 2:
        raise ValueError(f"frames must be 2-D (T, F), got {arr.shape}")
    body = _HEADER.pack(MAGIC, VERSION, 1, 0, arr.shape[0], arr.shape[1]) + arr.tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def write_frames(frames, path) -> None:
    Path(path).write_bytes(encode_frames_file(frames))


def _parse_header(buf: bytes, path):
    if len(buf) < _HEADER.size:
        raise CorruptPayload(f"{path}: file too short for a header")
    magic, version, dtype, _, t_raw, dim = _HEADER.unpack_from(buf)
    if magic != MAGIC or version != VERSION or dtype != 1:
        raise CorruptPayload(f"{path}: not a version-{VERSION} float64 frame file")
    return t_raw, dim


def read_header(path) -> tuple[int, int]:
    """(t_raw, feature_dim) without reading the payload."""
    try:
        with open(path, "rb") as fh:
            return _parse_header(fh.read(_HEADER.size), path)
    except FileNotFoundError as exc:
        raise UnresolvedSource(f"frame source {path} does not exist") from exc


def read_frames(path) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise UnresolvedSource(f"frame source {path} does not exist") from exc
    t_raw, dim = _parse_header(buf, path)
    expected = _HEADER.size + 8 * t_raw * dim + 4
    if len(buf) != expected:
        raise CorruptPayload(f"{path}: expected {expected} bytes, found {len(buf)}")
    (crc,) = struct.unpack_from("<I", buf, expected - 4)
    if crc != zlib.crc32(buf[: expected - 4]):
        raise CorruptPayload(f"{path}: checksum mismatch")
    return np.frombuffer(buf, dtype="<f8", count=t_raw * dim, offset=_HEADER.size) \
        .reshape(t_raw, dim).astype(np.float64)
