"""Versioned binary checkpoint of named float32 tensors.

Layout (all integers little-endian uint32, strings length-prefixed UTF-8)::

    b"PATCKPT1"
    format_version
    config           JSON text, keys sorted
    tensor_count
    repeated: name, ndim, dims..., raw float32 little-endian data
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .finetune import CheckpointError, Classifier, attach_head
from .model import ActigraphyTransformer, ModelConfig
from .pretrain import MAEConfig, MaskedAutoencoder

MAGIC = b"PATCKPT1"
FORMAT_VERSION = 1
_LE_F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    config: dict
    tensors: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @property
    def kind(self):
        return self.config.get("kind")

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.config["model"])


def _pack_str(s):
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def to_bytes(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", ckpt.format_version)]
    parts.append(_pack_str(json.dumps(ckpt.config, sort_keys=True, separators=(",", ":"))))
    parts.append(struct.pack("<I", len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        parts.append(_pack_str(name))
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_LE_F32).tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> Checkpoint:
    view = memoryview(buf)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    def u32():
        return struct.unpack("<I", take(4))[0]

    def string():
        return bytes(take(u32())).decode("utf-8")

    if bytes(take(8)) != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic")
    version = u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config = json.loads(string())
    tensors = {}
    for _ in range(u32()):
        name = string()
        ndim = u32()
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape, dtype=np.int64))
        # converts to native order on big-endian hosts
        data = np.frombuffer(take(4 * count), dtype=_LE_F32).astype(np.float32)
        tensors[name] = data.reshape(shape)
    if pos != len(view):
        raise CheckpointError("trailing bytes after tensor table")
    return Checkpoint(config, tensors, version)


def save_checkpoint(ckpt: Checkpoint, path):
    with open(path, "wb") as fh:
        fh.write(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def checkpoint_from_model(model: ActigraphyTransformer, extra=None) -> Checkpoint:
    config = {"model": model.cfg.to_dict()}
    if isinstance(model, MaskedAutoencoder):
        config["kind"] = "mae"
        config["mae"] = model.mae_cfg.to_dict()
    elif isinstance(model, Classifier):
        config["kind"] = "classifier"
        config["pooling"] = model.pooling
    else:
        config["kind"] = "backbone"
    if extra:
        config.update(extra)
    tensors = {n: p.data.copy() for n, p in model.named_parameters()}
    return Checkpoint(config, tensors)


def model_from_checkpoint(ckpt: Checkpoint):
    """Rebuild the model stored in ``ckpt`` (MAE, classifier or bare backbone)."""
    cfg = ckpt.model_config()
    kind = ckpt.kind
    if kind == "mae":
        model = MaskedAutoencoder(cfg, MAEConfig.from_dict(ckpt.config["mae"]), 0)
    elif kind == "classifier":
        model = Classifier(cfg, 0, ckpt.config.get("pooling", "mean"))
    elif kind == "backbone":
        model = ActigraphyTransformer(cfg, 0)
    else:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    try:
        model.load_arrays(ckpt.tensors)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(str(exc)) from None
    model.eval()
    return model


def classifier_from_checkpoint(ckpt: Checkpoint, cfg=None, rng=None, pooling="mean"):
    """A classifier from either a classifier checkpoint or a pretrained encoder."""
    if ckpt.kind == "classifier":
        return model_from_checkpoint(ckpt)
    return attach_head(ckpt, cfg or ckpt.model_config(), rng, pooling)
