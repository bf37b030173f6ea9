"""Binary tensor-blob format shared by checkpoints, sessions and the wire.

Layout: magic b"TBE1", version u8, dtype code u8, rank u8, then one u32
little-endian per dimension, then the row-major payload. Only float32
(code 1) is defined; round-trips are bit-exact.
"""

from __future__ import annotations

import base64
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TBE1"
VERSION = 1
DTYPE_FLOAT32 = 1

_DTYPES = {DTYPE_FLOAT32: np.dtype("<f4")}


class BlobFormatError(ValueError):
    pass


def encode_tensor(array: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(array, dtype=np.float32)
    if arr.ndim < 1 or arr.ndim > 255:
        raise BlobFormatError(f"unsupported rank {arr.ndim}")
    header = MAGIC + struct.pack("<BBB", VERSION, DTYPE_FLOAT32, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.astype("<f4", copy=False).tobytes()


def decode_tensor(data: bytes) -> np.ndarray:
    if len(data) < 7 or data[:4] != MAGIC:
        raise BlobFormatError("bad magic; not a TBE1 blob")
    version, dtype_code, rank = struct.unpack("<BBB", data[4:7])
    if version != VERSION:
        raise BlobFormatError(f"unsupported blob version {version}")
    if dtype_code not in _DTYPES:
        raise BlobFormatError(f"unsupported dtype code {dtype_code}")
    dim_end = 7 + 4 * rank
    if len(data) < dim_end:
        raise BlobFormatError("truncated dimension header")
    dims = struct.unpack(f"<{rank}I", data[7:dim_end])
    expected = 4 * int(np.prod(dims, dtype=np.int64))
    payload = data[dim_end:]
    if len(payload) != expected:
        raise BlobFormatError(f"payload length {len(payload)} != expected {expected}")
    return np.frombuffer(payload, dtype=_DTYPES[dtype_code]).reshape(dims).copy()


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_tensor(array))
    tmp.replace(path)


def read_tensor(path: str | Path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def tensor_to_b64(array: np.ndarray) -> str:
    return base64.b64encode(encode_tensor(array)).decode("ascii")


def tensor_from_b64(text: str) -> np.ndarray:
    try:
        raw = base64.b64decode(text, validate=True)
    except Exception as exc:
        raise BlobFormatError(f"invalid base64: {exc}") from exc
    return decode_tensor(raw)
