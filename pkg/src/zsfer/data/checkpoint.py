"""Versioned, checksummed model checkpoints.

Layout::

    magic        8 bytes  b"ZSFCKPT\\x00"
    version      u32
    header_len   u64
    header       UTF-8 JSON (sorted keys): encoder config, tensor table,
                 training progress, train config, tokenizer vocabulary
    payload      float64 little-endian tensors in tensor-table order
    sha256       32 bytes over everything above
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..encoders import EncoderConfig, ModelState
from ..errors import CorruptPayload, SchemaMismatch

MAGIC = b"ZSFCKPT\x00"
VERSION = 1
_PRE = struct.Struct("<8sIQ")


@dataclass
class Checkpoint:
    state: ModelState
    progress: object | None = None  # trainer.TrainResult when saved mid-training
    train_config: dict | None = None
    tokenizer: object | None = None
    extra: dict | None = None


def _progress_to_json(progress) -> dict | None:
    if progress is None:
        return None
    return {
        "global_step": progress.global_step,
        "epoch_losses": list(progress.epoch_losses),
        "steps": [[s.epoch, s.step, s.loss, s.tau] for s in progress.steps],
    }


def encode_checkpoint(state: ModelState, progress=None, train_config=None, tokenizer=None,
                      extra=None) -> bytes:
    names = sorted(state.params)
    header = {
        "schema_version": VERSION,
        "encoder_config": state.config.to_dict(),
        "tensors": [[n, list(state.params[n].shape)] for n in names],
        "progress": _progress_to_json(progress),
        "train_config": train_config.to_dict() if hasattr(train_config, "to_dict") else train_config,
        "tokenizer": tokenizer.to_dict() if tokenizer is not None else None,
        "extra": extra,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = b"".join(np.ascontiguousarray(state.params[n], dtype="<f8").tobytes() for n in names)
    body = _PRE.pack(MAGIC, VERSION, len(hbytes)) + hbytes + payload
    return body + hashlib.sha256(body).digest()


def save_checkpoint(state: ModelState, path, progress=None, train_config=None, tokenizer=None,
                    extra=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(state, progress, train_config, tokenizer, extra))
    return path


def decode_checkpoint(buf: bytes, expected_config: EncoderConfig | None = None) -> Checkpoint:
    from ..tokenizer import Tokenizer
    from ..trainer import StepRecord, TrainResult

    if len(buf) < _PRE.size + 32:
        raise CorruptPayload("checkpoint is truncated")
    body, digest = buf[:-32], buf[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptPayload("checkpoint checksum mismatch (truncated or modified file)")
    magic, version, hlen = _PRE.unpack_from(body)
    if magic != MAGIC:
        raise CorruptPayload("not a checkpoint file")
    if version != VERSION:
        raise SchemaMismatch(f"checkpoint schema version {version}, expected {VERSION}")
    header = json.loads(body[_PRE.size:_PRE.size + hlen])
    cfg = EncoderConfig(**header["encoder_config"])
    if expected_config is not None and cfg != expected_config:
        raise SchemaMismatch(f"checkpoint was saved for {cfg}, expected {expected_config}")
    params = {}
    offset = _PRE.size + hlen
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(body):
            raise CorruptPayload(f"tensor {name} runs past the end of the payload")
        params[name] = np.frombuffer(body, dtype="<f8", count=count, offset=offset) \
            .reshape(shape).astype(np.float64)
        offset = end
    if offset != len(body):
        raise CorruptPayload("trailing bytes after the tensor payload")
    try:
        state = ModelState(cfg, params)
    except ValueError as exc:
        raise SchemaMismatch(str(exc)) from exc

    progress = None
    if header.get("progress") is not None:
        p = header["progress"]
        progress = TrainResult(
            state,
            steps=[StepRecord(int(e), int(s), float(l), float(t)) for e, s, l, t in p["steps"]],
            epoch_losses=[float(x) for x in p["epoch_losses"]],
            global_step=int(p["global_step"]),
        )
    tok = Tokenizer.from_dict(header["tokenizer"]) if header.get("tokenizer") else None
    return Checkpoint(state, progress, header.get("train_config"), tok, header.get("extra"))


def load_checkpoint(path, expected_config: EncoderConfig | None = None) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes(), expected_config)
