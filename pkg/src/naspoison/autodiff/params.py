"""Named parameter storage split into model weights and architecture weights."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import Tensor

WEIGHTS = "weights"
ARCH = "arch"
GROUPS = (WEIGHTS, ARCH)

_MAGIC = b"NPCK"
_VERSION = 1


class CheckpointFormatError(ValueError):
    pass


class ParamStore:
    """Ordered mapping ``name -> Tensor`` with a disjoint group label per name."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self._groups: dict[str, str] = {}

    def add(self, name: str, value, group: str = WEIGHTS) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        if group not in GROUPS:
            raise ValueError(f"unknown parameter group {group!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._tensors[name] = t
        self._groups[name] = group
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self, group: str | None = None) -> list[str]:
        return [n for n in self._tensors if group is None or self._groups[n] == group]

    def group_of(self, name: str) -> str:
        return self._groups[name]

    def named_tensors(self, group: str | None = None) -> list[tuple[str, Tensor]]:
        return [(n, self._tensors[n]) for n in self.names(group)]

    def tensors(self, group: str | None = None) -> list[Tensor]:
        return [self._tensors[n] for n in self.names(group)]

    def subset(self, group: str) -> dict[str, Tensor]:
        return dict(self.named_tensors(group))

    def count(self, group: str | None = None) -> int:
        return int(sum(t.size for t in self.tensors(group)))

    def state_dict(self, group: str | None = None) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.named_tensors(group)}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, value in state.items():
            t = self._tensors[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != t.shape:
                raise ValueError(f"{name}: shape {value.shape} != {t.shape}")
            t.data = value.copy()

    def flat(self, group: str | None = None) -> np.ndarray:
        ts = self.tensors(group)
        return np.concatenate([t.data.ravel() for t in ts]) if ts else np.zeros(0)

    def save(self, path) -> None:
        save_checkpoint(self, path)


def save_checkpoint(store: ParamStore, path) -> None:
    """Flat little-endian binary: header, then (name, group, shape, float64 values) records."""
    parts = [_MAGIC, struct.pack("<II", _VERSION, len(store))]
    for name, t in store.named_tensors():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", GROUPS.index(store.group_of(name)), t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> ParamStore:
    buf = Path(path).read_bytes()
    if buf[:4] != _MAGIC:
        raise CheckpointFormatError("bad magic at byte 0")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != _VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version} at byte 4")
    pos = 12
    store = ParamStore()
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2 : pos + 2 + n].decode("utf-8")
            pos += 2 + n
            group, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if pos + 8 * size > len(buf):
                raise CheckpointFormatError(f"truncated values for {name!r} at byte {pos}")
            values = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            store.add(name, values.astype(np.float64), GROUPS[group])
    except struct.error as exc:
        raise CheckpointFormatError(f"truncated checkpoint at byte {pos}") from exc
    return store
