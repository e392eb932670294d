"""Versioned binary checkpoints.

Layout: 4-byte magic, little-endian u32 format version, u64 header length,
a JSON header (configs, state, named tensor index with shapes), the raw
tensor payload as little-endian float64 in row-major order, and a trailing
SHA-256 digest of everything before it. Loading verifies magic, version,
and digest before trusting any content, and refuses shape drift instead of
silently padding.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .autograd import Tensor
from .errors import (
    CheckpointChecksumError,
    CheckpointCorruptError,
    CheckpointShapeError,
    CheckpointVersionError,
)
from .losses import LossConfig
from .model import ModelConfig, ModelParams, param_shapes

MAGIC = b"TRRC"
VERSION = 1
_DIGEST_BYTES = 32


@dataclass
class CheckpointBundle:
    params: ModelParams
    model_config: ModelConfig
    train_config: Optional[dict]
    loss_config: Optional[LossConfig]
    state: dict


def save_checkpoint(
    path,
    params: ModelParams,
    model_config: ModelConfig,
    train_config: Optional[dict] = None,
    loss_config: Optional[LossConfig] = None,
    state: Optional[dict] = None,
) -> None:
    """Write params + configs + training state with a content checksum.

    ``train_config`` is any JSON-serializable mapping; ``state`` carries
    training provenance (epoch, seed, selection metric, vocabulary hash).
    """
    tensors = params.named()
    header = {
        "model_config": asdict(model_config),
        "train_config": dict(train_config) if train_config else None,
        "loss_config": asdict(loss_config) if loss_config else None,
        "state": dict(state) if state else {},
        "tensors": [{"name": name, "shape": list(t.shape)} for name, t in tensors],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(t.data, dtype="<f8").tobytes() for _, t in tensors)
    body = MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(header_bytes))
    body += header_bytes + payload
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(digest)


def load_checkpoint(path, expected_config: Optional[ModelConfig] = None) -> CheckpointBundle:
    """Read and verify a checkpoint.

    With ``expected_config``, every stored tensor must match the shape that
    configuration implies; a mismatch (for example loading under a larger
    ``max_len``) raises instead of padding.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    min_len = len(MAGIC) + 4 + 8 + _DIGEST_BYTES
    if len(blob) < min_len:
        raise CheckpointCorruptError(f"{path}: file too short to be a checkpoint")
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointCorruptError(f"{path}: bad magic bytes")
    (version,) = struct.unpack_from("<I", blob, len(MAGIC))
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {VERSION}")
    body, digest = blob[:-_DIGEST_BYTES], blob[-_DIGEST_BYTES:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointChecksumError(f"{path}: content checksum mismatch")

    (header_len,) = struct.unpack_from("<Q", blob, len(MAGIC) + 4)
    header_start = len(MAGIC) + 4 + 8
    payload_start = header_start + header_len
    if payload_start > len(body):
        raise CheckpointCorruptError(f"{path}: header length exceeds file size")
    try:
        header = json.loads(body[header_start:payload_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"{path}: unreadable header ({exc})") from exc

    try:
        model_config = ModelConfig(**header["model_config"])
        entries = header["tensors"]
    except (KeyError, TypeError) as exc:
        raise CheckpointCorruptError(f"{path}: malformed header ({exc})") from exc

    offset = payload_start
    loaded: dict[str, Tensor] = {}
    for entry in entries:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(body):
            raise CheckpointCorruptError(f"{path}: payload truncated at tensor {entry['name']}")
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(shape)
        loaded[entry["name"]] = Tensor(arr.copy(), requires_grad=True)
        offset += nbytes
    if offset != len(body):
        raise CheckpointCorruptError(f"{path}: {len(body) - offset} unexpected trailing bytes")

    stored_shapes = param_shapes(model_config)
    if set(loaded) != set(stored_shapes):
        raise CheckpointCorruptError(
            f"{path}: tensor names {sorted(loaded)} do not form a parameter set"
        )
    for name, shape in stored_shapes.items():
        if loaded[name].shape != shape:
            raise CheckpointCorruptError(
                f"{path}: stored {name} has shape {loaded[name].shape}, config implies {shape}"
            )

    if expected_config is not None:
        for name, shape in param_shapes(expected_config).items():
            if loaded[name].shape != shape:
                raise CheckpointShapeError(
                    f"{name}: checkpoint shape {loaded[name].shape} does not fit "
                    f"expected configuration shape {shape}"
                )

    loss_config = LossConfig(**header["loss_config"]) if header.get("loss_config") else None
    return CheckpointBundle(
        params=ModelParams(**loaded),
        model_config=model_config,
        train_config=header.get("train_config"),
        loss_config=loss_config,
        state=header.get("state", {}),
    )
