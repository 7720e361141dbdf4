"""
Checkpoint container.

Layout (little endian):
    8 bytes   magic b"DSCLCKPT"
    uint32    format version
    uint64    header length in bytes
    header    UTF-8 JSON: model/train config, label schema, tag schema, schema fingerprint,
              backbone identifier, tensor index [{name, shape, offset, count}]
    payload   float32 values of every tensor, in index order
"""

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import torch

from app.config import ModelConfig, TrainConfig
from app.errors import CheckpointFormatError, ConfigurationError, SchemaMismatchError
from app.network.ModelFactory import build_model
from app.network.SeriesClassifier import SeriesModel
from app.services.labels import LabelSchema
from app.services.metadata_schema import TagSchema, schema_from_json

logger = logging.getLogger(__name__)

MAGIC = b"DSCLCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    label_schema: LabelSchema
    tag_schema: TagSchema
    schema_fingerprint: str
    backbone_id: str
    tensors: Dict[str, np.ndarray]
    format_version: int = FORMAT_VERSION
    extra: Optional[Dict[str, Any]] = None

    @classmethod
    def from_model(cls, model: SeriesModel, model_config: ModelConfig, train_config: TrainConfig,
                   tag_schema: TagSchema, extra: Optional[Dict[str, Any]] = None) -> "Checkpoint":
        tensors = {
            name: t.detach().cpu().to(torch.float32).numpy().copy()
            for name, t in model.state_dict().items()
        }
        return cls(
            model_config=model_config,
            train_config=train_config,
            label_schema=model.label_schema,
            tag_schema=tag_schema,
            schema_fingerprint=tag_schema.fingerprint(),
            backbone_id=model.backbone_id,
            tensors=tensors,
            extra=extra,
        )

    def parameter_table(self) -> List[Dict[str, Any]]:
        return [{"name": n, "shape": list(a.shape), "count": int(a.size)} for n, a in self.tensors.items()]


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    index = []
    offset = 0
    for name, array in checkpoint.tensors.items():
        count = int(array.size)
        index.append({"name": name, "shape": list(array.shape), "offset": offset, "count": count})
        offset += count * _DTYPE.itemsize

    header = {
        "model_config": checkpoint.model_config.model_dump(mode="json"),
        "train_config": checkpoint.train_config.model_dump(mode="json"),
        "label_schema": checkpoint.label_schema.model_dump(mode="json"),
        "tag_schema": checkpoint.tag_schema.model_dump(mode="json", exclude_none=True),
        "schema_fingerprint": checkpoint.schema_fingerprint,
        "backbone_id": checkpoint.backbone_id,
        "extra": checkpoint.extra or {},
        "tensors": index,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for array in checkpoint.tensors.values():
            f.write(np.ascontiguousarray(array, dtype=_DTYPE).tobytes())
    logger.info(f"💾 Checkpoint saved: {path} ({len(index)} tensors, {offset:,} payload bytes)")
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointFormatError(f"{path}: file too short to be a checkpoint")
    magic, version, header_len = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})")

    start = _PREFIX.size
    if len(data) < start + header_len:
        raise CheckpointFormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"{path}: unreadable header ({e})") from e

    payload = memoryview(data)[start + header_len:]
    tensors: Dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        end = entry["offset"] + entry["count"] * _DTYPE.itemsize
        if end > len(payload):
            raise CheckpointFormatError(f"{path}: truncated payload at tensor '{entry['name']}'")
        flat = np.frombuffer(payload[entry["offset"]:end], dtype=_DTYPE)
        tensors[entry["name"]] = flat.reshape(entry["shape"]).astype(np.float32)

    tag_schema = schema_from_json(json.dumps(header["tag_schema"]))
    fingerprint = header["schema_fingerprint"]
    if tag_schema.fingerprint() != fingerprint:
        raise SchemaMismatchError(f"{path}: embedded tag schema does not match its recorded fingerprint")

    return Checkpoint(
        model_config=ModelConfig.model_validate(header["model_config"]),
        train_config=TrainConfig.model_validate(header["train_config"]),
        label_schema=LabelSchema.model_validate(header["label_schema"]),
        tag_schema=tag_schema,
        schema_fingerprint=fingerprint,
        backbone_id=header["backbone_id"],
        tensors=tensors,
        format_version=version,
        extra=header.get("extra") or None,
    )


def restore_model(checkpoint: Checkpoint, model_config: Optional[ModelConfig] = None) -> SeriesModel:
    """
    Rebuild the model a checkpoint was saved from and load its weights.
    A model_config with a different backbone than the checkpoint is rejected.
    """
    config = model_config or checkpoint.model_config
    if config.backbone != checkpoint.model_config.backbone:
        raise ConfigurationError(
            f"backbone '{config.backbone}' requested but checkpoint holds '{checkpoint.model_config.backbone}'"
        )
    model = build_model(config, checkpoint.train_config.baseline, checkpoint.tag_schema.feature_count,
                        checkpoint.label_schema)
    if model.backbone_id != checkpoint.backbone_id:
        raise ConfigurationError(f"backbone mismatch: model '{model.backbone_id}' vs checkpoint '{checkpoint.backbone_id}'")
    load_weights(model, checkpoint)
    model.schema_fingerprint = checkpoint.schema_fingerprint
    return model


def load_weights(model: SeriesModel, checkpoint: Checkpoint) -> None:
    state = model.state_dict()
    missing = sorted(set(state) - set(checkpoint.tensors))
    unexpected = sorted(set(checkpoint.tensors) - set(state))
    if missing or unexpected:
        raise CheckpointFormatError(f"parameter names differ: missing={missing[:5]} unexpected={unexpected[:5]}")
    new_state = {}
    for name, target in state.items():
        array = checkpoint.tensors[name]
        if tuple(array.shape) != tuple(target.shape):
            raise CheckpointFormatError(f"tensor '{name}' has shape {array.shape}, model expects {tuple(target.shape)}")
        new_state[name] = torch.from_numpy(array.copy()).to(target.dtype)
    model.load_state_dict(new_state)
