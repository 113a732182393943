"""Symmetric in-batch contrastive training with split-rate SGD."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoders import (
    ModelState,
    clamp_log_scale,
    is_backbone,
    text_backward,
    text_forward,
    video_backward,
    video_forward,
)
from .errors import InsufficientData, NonFiniteLoss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    head_lr: float = 1e-3
    backbone_lr: float = 1e-6
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    max_clip_len: int = 32
    temporal_downsample: int = 4
    jitter: float = 0.0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.head_lr < 0 or self.backbone_lr < 0:
            raise ValueError("learning rates must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 so every batch has negatives")
        if self.epochs < 0 or self.max_clip_len < 1 or self.temporal_downsample < 1:
            raise ValueError("epochs, max_clip_len and temporal_downsample must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Batch:
    """``frames`` is (B, T, F); ``tokens`` holds B token-id sequences."""

    frames: np.ndarray
    tokens: list

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[0] < 1:
            raise InsufficientData(f"batch frames must be (B>=1, T, F), got {self.frames.shape}")
        if len(self.tokens) != self.frames.shape[0]:
            raise ValueError(f"{self.frames.shape[0]} videos but {len(self.tokens)} captions")

    def __len__(self):
        return self.frames.shape[0]

    def permuted(self, order: Sequence[int]) -> "Batch":
        return Batch(self.frames[list(order)], [self.tokens[i] for i in order])


def symmetric_cross_entropy(logits: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean of row-wise and column-wise cross-entropy with diagonal targets.

    Returns the loss and its gradient with respect to ``logits``.
    """
    b = logits.shape[0]
    idx = np.arange(b)
    row_max = logits.max(1, keepdims=True)
    row_lse = row_max[:, 0] + np.log(np.exp(logits - row_max).sum(1))
    col_max = logits.max(0, keepdims=True)
    col_lse = col_max[0] + np.log(np.exp(logits - col_max).sum(0))
    diag = logits[idx, idx]
    loss = 0.5 * (np.mean(row_lse - diag) + np.mean(col_lse - diag))
    p_row = np.exp(logits - row_lse[:, None])
    p_col = np.exp(logits - col_lse[None, :])
    eye = np.eye(b)
    dlogits = 0.5 * ((p_row - eye) + (p_col - eye)) / b
    return float(loss), dlogits


def embedding_loss(video_z: np.ndarray, text_z: np.ndarray, log_scale: float):
    """Loss and gradients w.r.t. unit video/text embeddings and the log scale."""
    raw = math.exp(log_scale)
    scale = min(raw, 100.0)
    sims = video_z @ text_z.T
    loss, dlogits = symmetric_cross_entropy(scale * sims)
    dsims = scale * dlogits
    dlog = float((dlogits * sims).sum()) * scale if raw < 100.0 else 0.0
    return loss, dsims @ text_z, dsims.T @ video_z, dlog


def contrastive_loss(state: ModelState, batch: Batch) -> tuple[float, dict[str, np.ndarray]]:
    """Symmetric contrastive loss of a batch and gradients for every parameter."""
    vz, vcache = video_forward(state, batch.frames)
    tz, tcache = text_forward(state, batch.tokens)
    loss, dv, dt, dlog = embedding_loss(vz, tz, float(state.params["log_scale"]))
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")
    grads: dict[str, np.ndarray] = {}
    video_backward(state, vcache, dv, grads)
    text_backward(state, tcache, dt, grads)
    grads["log_scale"] = np.array(dlog)
    return loss, grads


def loss_value(state: ModelState, batch: Batch) -> float:
    vz, _ = video_forward(state, batch.frames)
    tz, _ = text_forward(state, batch.tokens)
    return embedding_loss(vz, tz, float(state.params["log_scale"]))[0]


def sgd_update(state: ModelState, grads: dict, head_lr: float, backbone_lr: float) -> ModelState:
    params = {}
    for name, value in state.params.items():
        lr = backbone_lr if is_backbone(name) else head_lr
        params[name] = value - lr * grads[name] if lr else value
    params["log_scale"] = np.array(clamp_log_scale(params["log_scale"]))
    new = ModelState(state.config, params)
    if not new.is_finite():
        raise NonFiniteLoss("parameters became non-finite after the update")
    return new


def train_step(state: ModelState, batch: Batch, config: TrainConfig) -> tuple[ModelState, float]:
    """One plain-SGD step. On a non-finite loss the exception propagates and
    ``state`` is untouched."""
    loss, grads = contrastive_loss(state, batch)
    return sgd_update(state, grads, config.head_lr, config.backbone_lr), loss


# ---------------------------------------------------------------- training loop


@dataclass
class StepRecord:
    epoch: int
    step: int
    loss: float
    tau: float


@dataclass
class TrainResult:
    state: ModelState
    steps: list[StepRecord] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    global_step: int = 0

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else float("nan")


def write_loss_csv(steps: Sequence[StepRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "step", "loss", "tau"])
        for r in steps:
            w.writerow([r.epoch, r.step, repr(r.loss), repr(r.tau)])


def training_pairs(manifest, tokenizer, seed: int = 0):
    """(record, token ids) for every record usable as a video-caption pair.

    Neutral records without a caption get two concatenated neutral prompts,
    drawn deterministically per record.
    """
    from .prompts import sample_neutral_description

    pairs = []
    for i, rec in enumerate(manifest.records):
        caption = rec.caption
        if not caption and rec.label == "neutral":
            caption = sample_neutral_description((seed, i))
        if caption:
            pairs.append((rec, tokenizer.encode(caption)))
    return pairs


def train(
    state: ModelState,
    manifest,
    config: TrainConfig,
    tokenizer,
    *,
    checkpoint_dir=None,
    resume: "TrainResult | None" = None,
    stop_after_epoch: int | None = None,
) -> TrainResult:
    """Run ``config.epochs`` epochs of shuffled mini-batch training.

    Shuffling and clip crops are derived from ``(seed, epoch)`` so a run
    resumed from a checkpoint replays the same batches as an uninterrupted one.
    """
    from .data.clips import sample_clip
    from .data.checkpoint import save_checkpoint

    pairs = training_pairs(manifest, tokenizer, config.seed)
    if len(pairs) < config.batch_size:
        raise InsufficientData(
            f"{len(pairs)} captioned samples, need at least batch_size={config.batch_size}")
    result = resume if resume is not None else TrainResult(state)
    start = len(result.epoch_losses)
    last = config.epochs if stop_after_epoch is None else min(config.epochs, stop_after_epoch)
    state = result.state
    n_batches = len(pairs) // config.batch_size
    for epoch in range(start, last):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(len(pairs))
        losses = []
        for b in range(n_batches):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            frames = np.stack([
                sample_clip(pairs[i][0].load_frames(), "train", config.max_clip_len,
                            config.temporal_downsample, seed=(config.seed, epoch, int(i)))
                for i in idx])
            if config.jitter:
                frames = frames + rng.normal(0.0, config.jitter, frames.shape)
            batch = Batch(frames, [pairs[i][1] for i in idx])
            try:
                state, loss = train_step(state, batch, config)
            except NonFiniteLoss as exc:
                raise NonFiniteLoss(f"epoch {epoch} step {b}: {exc}") from exc
            result.global_step += 1
            losses.append(loss)
            result.steps.append(StepRecord(epoch, result.global_step, loss, state.temperature.tau))
        result.state = state
        result.epoch_losses.append(float(np.mean(losses)))
        log.info("epoch %d mean loss %.6f tau %.5f", epoch, result.epoch_losses[-1],
                 state.temperature.tau)
        if checkpoint_dir is not None and config.checkpoint_every and \
                (epoch + 1) % config.checkpoint_every == 0:
            path = Path(checkpoint_dir) / f"epoch{epoch + 1:04d}.ckpt"
            save_checkpoint(state, path, progress=result, train_config=config, tokenizer=tokenizer)
    return result
