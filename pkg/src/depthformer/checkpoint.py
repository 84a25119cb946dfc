"""Binary named-tensor checkpoints with a plain-text metadata sidecar.

Layout (all integers little-endian): a single version byte, then the
tensor count (u32), then per tensor a u16 name length, the UTF-8 name,
a dtype code byte, a rank byte, u32 dims, and the raw array payload.
Metadata goes to ``<path>.meta`` as ``key = value`` lines.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}


def meta_path(path: str | Path) -> Path:
    return Path(str(path) + ".meta")


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], meta: dict[str, str]) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<B", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            if arr.dtype not in _DTYPE_CODES:
                raise ValueError(f"{name}: unsupported dtype {arr.dtype}")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    with open(meta_path(path), "w", encoding="utf-8") as fh:
        for key, value in meta.items():
            fh.write(f"{key} = {value}\n")


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    blob = Path(path).read_bytes()
    offset = 0

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        values = struct.unpack_from(fmt, blob, offset)
        offset += size
        return values

    (version,) = take("<B")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (count,) = take("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<H")
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        code, ndim = take("<BB")
        shape = take(f"<{ndim}I")
        dtype = _CODE_DTYPES[code].newbyteorder("<")
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arrays[name] = (
            np.frombuffer(blob, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)), offset=offset)
            .reshape(shape)
            .astype(_CODE_DTYPES[code])
        )
        offset += n_bytes

    meta: dict[str, str] = {}
    mp = meta_path(path)
    if mp.exists():
        for line in mp.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            key, value = line.split("=", 1)
            meta[key.strip()] = value.strip()
    return arrays, meta
