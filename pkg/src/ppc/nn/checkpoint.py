"""Binary parameter checkpoints.

Layout (little-endian): magic ``PPCK``, u32 version, 32-byte sha256 digest of the
canonical config JSON, u32 blob count, then per blob: u32 name length, UTF-8
name, u32 rank, rank x u32 dims, float64 data. The config itself and the
training log live in a JSON sidecar (``<path>.json``).
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .models import AlgClsModel, ModelConfig

MAGIC = b"PPCK"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def config_digest(config: dict) -> bytes:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).digest()


def save_parameters(path, params: dict[str, np.ndarray], config: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<I", VERSION), config_digest(config), struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        raw = name.encode()
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    path.write_bytes(b"".join(chunks))


def load_parameters(path) -> tuple[bytes, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    try:
        (version,) = struct.unpack_from("<I", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        digest = buf[8:40]
        (count,) = struct.unpack_from("<I", buf, 40)
        off, params = 44, {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, off)
            name = buf[off + 4:off + 4 + n].decode()
            off += 4 + n
            (rank,) = struct.unpack_from("<I", buf, off)
            dims = struct.unpack_from(f"<{rank}I", buf, off + 4)
            off += 4 + 4 * rank
            size = int(np.prod(dims)) * 8
            if off + size > len(buf):
                raise CheckpointError(f"{path}: truncated blob {name!r}")
            params[name] = np.frombuffer(buf, "<f8", int(np.prod(dims)), off).reshape(dims).copy()
            off += size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    return digest, params


def sidecar(path) -> Path:
    return Path(str(path) + ".json")


def save_checkpoint(path, model: AlgClsModel, train_cfg: dict, history: list[dict]) -> None:
    config = {"model": model.cfg.to_dict(), "train": train_cfg}
    save_parameters(path, model.parameters(), config)
    sidecar(path).write_text(json.dumps({"config": config, "log": history}, sort_keys=True, indent=1))


def load_checkpoint(path) -> tuple[AlgClsModel, dict]:
    digest, params = load_parameters(path)
    meta = json.loads(sidecar(path).read_text())
    if config_digest(meta["config"]) != digest:
        raise CheckpointError(f"{path}: sidecar config does not match the checkpoint digest")
    model = AlgClsModel(ModelConfig.from_dict(meta["config"]["model"]), 0)
    model.load_parameters(params)
    return model, meta
