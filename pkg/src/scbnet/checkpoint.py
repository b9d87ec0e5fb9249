"""Binary checkpoint format.

Layout, all integers little-endian::

    b"SCBN"                     magic
    u16                         format version (1)
    u32 + utf-8 bytes           architecture config (JSON)
    u32                         number of parameter blocks
    per block, in spec order:
        u16 + utf-8 bytes       name, e.g. "cb1.conv.weight"
        u8                      1 if trainable, 0 for BN running statistics
        u8                      rank
        u32 * rank              dims
        f32 * prod(dims)        values, IEEE-754
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import ops
from .architecture import (
    NetworkParams,
    NetworkSpec,
    check_params,
    compile_network,
    iter_layers,
    spec_from_config,
    spec_to_config,
)
from .errors import (
    CheckpointError,
    CheckpointMagicError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ShapeError,
)

MAGIC = b"SCBN"
VERSION = 1


def to_bytes(spec: NetworkSpec, params: NetworkParams) -> bytes:
    check_params(spec, params)
    config = spec_to_config(spec).encode("utf-8")
    blocks = list(params.arrays())
    out = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(config)), config,
           struct.pack("<I", len(blocks))]
    for name, arr, trainable in blocks:
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<BB", int(trainable), arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(
                f"checkpoint truncated while reading {what} at byte {self.pos} "
                f"(need {n}, have {len(self.buf) - self.pos})"
            )
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def from_bytes(buf: bytes) -> tuple[NetworkSpec, NetworkParams]:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointMagicError(f"bad checkpoint magic {magic!r}, expected {MAGIC!r}")
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}, expected {VERSION}")
    (clen,) = r.unpack("<I", "config length")
    spec = spec_from_config(r.take(clen, "config").decode("utf-8"))
    (count,) = r.unpack("<I", "block count")
    arrays: dict[str, np.ndarray] = {}
    for k in range(count):
        (nlen,) = r.unpack("<H", f"block {k} name length")
        name = r.take(nlen, f"block {k} name").decode("utf-8")
        _trainable, rank = r.unpack("<BB", f"block {name} header")
        dims = r.unpack(f"<{rank}I", f"block {name} dims")
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        values = np.frombuffer(r.take(4 * size, f"block {name} values"), dtype="<f4")
        arrays[name] = values.reshape(dims).astype(np.float32)
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after the last parameter block")
    params = _assemble(spec, arrays)
    try:
        check_params(spec, params)
    except ShapeError as exc:
        raise CheckpointShapeError(f"checkpoint disagrees with its architecture: {exc}") from None
    return spec, params


def _assemble(spec: NetworkSpec, arrays: dict[str, np.ndarray]) -> NetworkParams:
    layers = {}
    used = set()

    def get(name: str) -> np.ndarray:
        if name not in arrays:
            raise CheckpointShapeError(f"checkpoint is missing parameter block {name}")
        used.add(name)
        return arrays[name]

    for layer in iter_layers(compile_network(spec)):
        n = layer.name
        if layer.kind in ("conv", "dense"):
            cls = ops.ConvParams if layer.kind == "conv" else ops.DenseParams
            layers[n] = cls(get(f"{n}.weight"), get(f"{n}.bias"))
        elif layer.kind == "bn":
            layers[n] = ops.BatchNormParams(
                get(f"{n}.gamma"), get(f"{n}.beta"), get(f"{n}.running_mean"), get(f"{n}.running_var")
            )
    extra = set(arrays) - used
    if extra:
        raise CheckpointShapeError(f"checkpoint has unexpected parameter blocks: {sorted(extra)}")
    return NetworkParams(layers)


def save_model(spec: NetworkSpec, params: NetworkParams, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(spec, params))


def load_model(path: str | Path) -> tuple[NetworkSpec, NetworkParams]:
    return from_bytes(Path(path).read_bytes())
