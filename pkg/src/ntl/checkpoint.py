"""Binary checkpoint container.

Layout (little-endian)::

    b"NTLF" | u32 version | u32 len | ModelConfig as UTF-8 JSON
    | u32 tensor count | per tensor: u32 rank, u32 dims..., float32 data

Tensors are written in parameter declaration order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, Params, param_shapes

MAGIC = b"NTLF"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: Params, cfg: ModelConfig, path: str | Path) -> None:
    shapes = param_shapes(cfg)
    if list(shapes) != list(params):
        raise CheckpointError("parameter names do not match the model configuration")
    meta = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(params))]
    for name, arr in params.items():
        if arr.shape != shapes[name]:
            raise CheckpointError(f"{name}: shape {arr.shape} != {shapes[name]}")
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path, vocab_size: int | None = None) -> tuple[Params, ModelConfig]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    try:
        version, n = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        off = 12
        cfg = ModelConfig(**json.loads(buf[off:off + n].decode("utf-8")))
        off += n
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        shapes = param_shapes(cfg)
        if count != len(shapes):
            raise CheckpointError(f"{path}: expected {len(shapes)} tensors, found {count}")
        params: Params = {}
        for name, shape in shapes.items():
            (rank,) = struct.unpack_from("<I", buf, off)
            dims = struct.unpack_from(f"<{rank}I", buf, off + 4)
            off += 4 + 4 * rank
            if tuple(dims) != shape:
                raise CheckpointError(f"{path}: {name} has shape {dims}, expected {shape}")
            size = int(np.prod(dims)) * 4
            if off + size > len(buf):
                raise CheckpointError(f"{path}: truncated file")
            params[name] = np.frombuffer(buf, dtype="<f4", count=size // 4, offset=off).reshape(dims).astype(cfg.dtype)
            off += size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated file") from exc
    if off != len(buf):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")
    if vocab_size is not None and cfg.vocab_size != vocab_size:
        raise CheckpointError(f"checkpoint vocab size {cfg.vocab_size} != vocabulary size {vocab_size}")
    return params, cfg
