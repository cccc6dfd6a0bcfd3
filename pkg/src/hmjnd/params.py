"""Named parameter storage, initialisation and the HMT1 tensor container."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from .autodiff import Tensor

MAGIC = b"HMT1"


class TensorFormatError(ValueError):
    pass


def write_tensor(path, array) -> None:
    """Write ``array`` as: magic, u32 rank, u32 dims, little-endian float32 payload."""
    arr = np.asarray(array, dtype="<f4")  # not ascontiguousarray: it promotes 0-d to 1-d
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {raw[:4]!r} at byte 0")
    if len(raw) < 8:
        raise TensorFormatError(f"{path}: truncated header at byte 4")
    (rank,) = struct.unpack_from("<I", raw, 4)
    header = 8 + 4 * rank
    if len(raw) < header:
        raise TensorFormatError(f"{path}: truncated dims at byte 8")
    dims = struct.unpack_from(f"<{rank}I", raw, 8)
    count = int(np.prod(dims)) if rank else 1
    if len(raw) != header + 4 * count:
        raise TensorFormatError(
            f"{path}: payload is {len(raw) - header} bytes at offset {header}, expected {4 * count}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=header)
    return data.reshape(dims).astype(np.float64)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    """Normal samples redrawn until they fall inside ``bound`` standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


class ParamStore:
    """Map from dotted parameter path to trainable tensor, plus Adam state."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.step = 0
        self.moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def add(self, path: str, value) -> Tensor:
        if path in self.params:
            raise KeyError(f"duplicate parameter path {path!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=path)
        self.params[path] = t
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self.params[path]

    def __contains__(self, path: str) -> bool:
        return path in self.params

    def __len__(self) -> int:
        return len(self.params)

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def items(self):
        return self.params.items()

    def tensors(self) -> list[Tensor]:
        return list(self.params.values())

    def subset(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith(prefix)}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def num_values(self) -> int:
        return sum(t.size for t in self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for k, t in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {t.shape}")
            t.data = arr.copy()


def save_params(store: ParamStore, directory, extra: dict[str, str] | None = None) -> Path:
    """Write one HMT1 file per parameter plus ``manifest.txt``.

    The manifest lists ``key=value`` lines from ``extra`` followed by one
    ``param=<path> <file> <shape>`` line per parameter in insertion order.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"{k}={v}" for k, v in (extra or {}).items()]
    for i, (path, t) in enumerate(store.items()):
        fname = f"p{i:03d}.hmt"
        write_tensor(directory / fname, t.data)
        lines.append(f"param={path} {fname} {'x'.join(map(str, t.shape)) or 'scalar'}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")
    return directory


def read_manifest(directory) -> tuple[dict[str, str], list[tuple[str, str]]]:
    meta: dict[str, str] = {}
    entries: list[tuple[str, str]] = []
    for line in (Path(directory) / "manifest.txt").read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        if key == "param":
            path, fname, _shape = value.split(" ")
            entries.append((path, fname))
        else:
            meta[key] = value
    return meta, entries


def load_state(directory) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    meta, entries = read_manifest(directory)
    state = {path: read_tensor(Path(directory) / fname) for path, fname in entries}
    return meta, state
