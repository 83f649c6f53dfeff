"""Little-endian binary containers for tensors (``RGBPT``) and weights (``RGBPW``).

RGBPT layout::

    magic  b"RGBPT"
    u16    version (1)
    u8     dtype code
    u8     rank
    u32    dims[rank]
    bytes  payload, row-major

RGBPW layout::

    magic  b"RGBPW"
    u16    version (1)
    u32    entry count
    then per entry: u16 name length, UTF-8 name, u8 dtype code, u8 rank,
    u32 dims[rank], payload

All integers are little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

TENSOR_MAGIC = b"RGBPT"
WEIGHTS_MAGIC = b"RGBPW"
VERSION = 1

DTYPE_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("u1"): 3,
    np.dtype("<u2"): 4,
    np.dtype("<i4"): 5,
    np.dtype("<i8"): 6,
}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


def _encode_array(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    key = arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype
    code = DTYPE_CODES.get(key)
    if code is None:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError(f"rank {arr.ndim} too large")
    head = struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=CODE_DTYPES[code]).tobytes()


class _Reader:
    def __init__(self, buf: bytes, entry: str | None = None):
        self.buf = buf
        self.pos = 0
        self.entry = entry

    def _where(self, offset: int) -> str:
        return f"byte {offset}" + (f", entry {self.entry!r}" if self.entry else "")

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated while reading {what}", self._where(self.pos))
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def array(self) -> np.ndarray:
        start = self.pos
        code, rank = self.unpack("<BB", "dtype/rank")
        dtype = CODE_DTYPES.get(code)
        if dtype is None:
            raise FormatError(f"unknown dtype code {code}", self._where(start))
        dims = self.unpack(f"<{rank}I", "dims") if rank else ()
        count = 1
        for d in dims:
            count *= d
        nbytes = count * dtype.itemsize
        if nbytes > len(self.buf) - self.pos:
            raise FormatError(
                f"dims {dims} need {nbytes} payload bytes, only {len(self.buf) - self.pos} remain",
                self._where(self.pos),
            )
        payload = self.take(nbytes, "payload")
        return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def _check_magic(r: _Reader, magic: bytes) -> None:
    got = r.take(len(magic), "magic")
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}", "byte 0")
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", f"byte {len(magic)}")


# ---------------------------------------------------------------- tensors


def dumps_tensor(arr: np.ndarray) -> bytes:
    return TENSOR_MAGIC + struct.pack("<H", VERSION) + _encode_array(arr)


def loads_tensor(buf: bytes) -> np.ndarray:
    r = _Reader(buf)
    _check_magic(r, TENSOR_MAGIC)
    arr = r.array()
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes", f"byte {r.pos}")
    return arr


def save_tensor(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(dumps_tensor(arr))


def load_tensor(path) -> np.ndarray:
    return loads_tensor(Path(path).read_bytes())


# ---------------------------------------------------------------- weights


def dumps_weights(named: dict[str, np.ndarray]) -> bytes:
    parts = [WEIGHTS_MAGIC, struct.pack("<HI", VERSION, len(named))]
    for name, arr in named.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(_encode_array(arr))
    return b"".join(parts)


def loads_weights(buf: bytes) -> dict[str, np.ndarray]:
    r = _Reader(buf)
    _check_magic(r, WEIGHTS_MAGIC)
    (count,) = r.unpack("<I", "entry count")
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        r.entry = f"#{i}"
        (n,) = r.unpack("<H", "name length")
        try:
            name = r.take(n, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("entry name is not UTF-8", r._where(r.pos - n)) from exc
        r.entry = name
        if name in out:
            raise FormatError(f"duplicate entry {name!r}", r._where(r.pos))
        out[name] = r.array()
    r.entry = None
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes", f"byte {r.pos}")
    return out


def save_weights_file(path, named: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps_weights(named))


def load_weights_file(path) -> dict[str, np.ndarray]:
    return loads_weights(Path(path).read_bytes())
