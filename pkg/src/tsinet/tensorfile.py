"""Binary tensor files and named-weight directories.

File layout (little-endian): magic "TSIT", u32 version = 1, u8 dtype
(0 = float32, 1 = float64), u8 ndim, ndim x u64 dimension sizes, then the
row-major payload. Round trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .tensor import ConfigError, Tensor

MAGIC = b"TSIT"
VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class FormatError(ValueError):
    """Corrupt or unsupported tensor file."""


def tensor_bytes(t: Tensor | np.ndarray) -> bytes:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise ConfigError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise ConfigError("too many dimensions")
    header = MAGIC + struct.pack("<IBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr).astype(_CODE_DTYPES[code], copy=False).tobytes()
    return header + payload


def tensor_from_bytes(raw: bytes) -> Tensor:
    if raw[:4] != MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}")
    version, code, ndim = struct.unpack_from("<IBB", raw, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    offset = 10
    shape = struct.unpack_from(f"<{ndim}Q", raw, offset)
    offset += 8 * ndim
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(shape)) if shape else 1
    expected = offset + count * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(f"payload is {len(raw) - offset} bytes, expected {expected - offset}")
    arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape)
    return Tensor(arr.astype(dtype.newbyteorder("="), copy=True))


def save_tensor(path: str | Path, t: Tensor | np.ndarray) -> None:
    Path(path).write_bytes(tensor_bytes(t))


def load_tensor(path: str | Path) -> Tensor:
    return tensor_from_bytes(Path(path).read_bytes())


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_named_tensors(directory: str | Path, tensors: dict[str, Tensor | np.ndarray],
                       extra: dict | None = None) -> None:
    """Write one tensor file per name plus a JSON sidecar naming each weight."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index: dict[str, str] = {}
    for name, t in tensors.items():
        filename = name.replace("/", "_") + ".tsit"
        save_tensor(directory / filename, t)
        index[name] = filename
    sidecar = {"format_version": VERSION, "tensors": index}
    if extra:
        sidecar.update(extra)
    (directory / "tensors.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_named_tensors(directory: str | Path) -> tuple[dict[str, Tensor], dict]:
    directory = Path(directory)
    sidecar = json.loads((directory / "tensors.json").read_text())
    tensors = {name: load_tensor(directory / filename)
               for name, filename in sidecar["tensors"].items()}
    return tensors, sidecar
