"""Named parameter storage and the NTF1 binary tensor / checkpoint format.

NTF1 tensor: ``b"NTF1"``, u32 rank, rank x u32 extents, little-endian f32
payload in row-major order.

Checkpoint: u32 entry count, then per entry a u16 name length, the UTF-8
name, and the tensor in NTF1 layout.
"""

from __future__ import annotations

import hashlib
import io
import os
import struct
from collections import OrderedDict
from typing import BinaryIO, Iterator, Mapping, Union

import numpy as np

from .tensor import Tensor

MAGIC = b"NTF1"
PathLike = Union[str, os.PathLike]


class FormatError(ValueError):
    """Raised for malformed NTF1 or checkpoint streams."""


def write_tensor(fh: BinaryIO, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    fh.write(MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    if arr.ndim:
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated stream: wanted {n} bytes, got {len(buf)}")
    return buf


def read_tensor(fh: BinaryIO) -> np.ndarray:
    if _read_exact(fh, 4) != MAGIC:
        raise FormatError("bad magic, expected NTF1")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4))
    shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank)) if rank else ()
    count = int(np.prod(shape)) if rank else 1
    payload = _read_exact(fh, 4 * count)
    return np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)


def save_ntf(path: PathLike, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, arr)


def load_ntf(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def dump_entries(entries: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(entries)))
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"entry name too long: {name[:40]}...")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        write_tensor(buf, arr)
    return buf.getvalue()


def parse_entries(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    fh = io.BytesIO(blob)
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, nlen).decode("utf-8")
        if name in out:
            raise FormatError(f"duplicate entry {name!r}")
        out[name] = read_tensor(fh)
    if fh.read(1):
        raise FormatError("trailing bytes after last entry")
    return out


def save_checkpoint(path: PathLike, entries: Mapping[str, np.ndarray]) -> None:
    blob = dump_entries(entries)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path: PathLike) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        return parse_entries(fh.read())


class ParamStore:
    """Ordered name -> learnable tensor map with a step counter."""

    def __init__(self, entries: Mapping[str, np.ndarray] | None = None, step_count: int = 0):
        self._entries: OrderedDict[str, Tensor] = OrderedDict()
        self.step_count = step_count
        for name, arr in (entries or {}).items():
            self.add(name, arr)

    def add(self, name: str, value) -> Tensor:
        if name in self._entries:
            raise KeyError(f"duplicate parameter {name!r}")
        arr = value.data if isinstance(value, Tensor) else value
        t = Tensor._wrap(np.array(arr, dtype=np.float32), requires_grad=True)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self) -> list:
        return list(self._entries)

    def with_prefix(self, prefix: str) -> "ParamStore":
        """A view sharing the tensors whose names start with ``prefix``."""
        sub = ParamStore(step_count=self.step_count)
        for name, t in self._entries.items():
            if name.startswith(prefix):
                sub._entries[name] = t
        return sub

    def update(self, other: "ParamStore") -> None:
        for name, t in other.items():
            if name in self._entries:
                raise KeyError(f"duplicate parameter {name!r}")
            self._entries[name] = t

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def num_parameters(self) -> int:
        return sum(t.size for t in self._entries.values())

    def to_arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, t.data.copy()) for n, t in self._entries.items())

    def load_arrays(self, arrays: Mapping[str, np.ndarray], strict: bool = True) -> None:
        for name, t in self._entries.items():
            if name not in arrays:
                if strict:
                    raise KeyError(f"missing parameter {name!r}")
                continue
            arr = arrays[name]
            if arr.shape != t.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {t.shape}")
            t.data = np.array(arr, dtype=np.float32)

    def copy(self) -> "ParamStore":
        return ParamStore(self.to_arrays(), self.step_count)

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, t in self._entries.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
        return h.hexdigest()

    def save(self, path: PathLike) -> None:
        entries = self.to_arrays()
        entries["meta/step_count"] = np.array(self.step_count, dtype=np.float32)
        save_checkpoint(path, entries)

    @classmethod
    def load(cls, path: PathLike) -> "ParamStore":
        entries = load_checkpoint(path)
        step = int(entries.pop("meta/step_count", np.float32(0)))
        return cls(entries, step)
