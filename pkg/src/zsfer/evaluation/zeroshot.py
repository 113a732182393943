"""Zero-shot classification of videos against class-embedding registries."""
from __future__ import annotations

import numpy as np

from ..data.clips import sample_clip
from ..embedding import classify, normalize_rows
from ..encoders import ModelState, encode_video
from ..errors import ClassNotInRegistry
from ..prompts import DescriptionRegistry, prompt_ensemble_registry
from .metrics import ClassificationReport, classification_metrics

VIDEO_MODES = ("temporal", "middle_frame", "frame_ensemble")
PROMPT_MODES = ("class_description", "prompt_ensemble")


def _chunks(n, size):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def video_embeddings(state: ModelState, clips: np.ndarray, mode: str = "temporal",
                     chunk: int = 256) -> np.ndarray:
    """(B, D) embeddings of (B, T, F) clips under one of the video modes.

    ``middle_frame`` and ``frame_ensemble`` route single frames through the
    video encoder as one-frame clips, so every frame gets a text-aligned
    embedding without any temporal context.
    """
    if mode not in VIDEO_MODES:
        raise ValueError(f"unknown video mode {mode!r}")
    clips = np.asarray(clips, dtype=np.float64)
    b, t, f = clips.shape
    out = np.empty((b, state.config.dim))
    for s in _chunks(b, chunk):
        part = clips[s]
        if mode == "temporal":
            out[s] = encode_video(state, part)
        elif mode == "middle_frame":
            out[s] = encode_video(state, part[:, t // 2:t // 2 + 1])
        else:
            per_frame = encode_video(state, part.reshape(-1, 1, f)).reshape(len(part), t, -1)
            out[s] = normalize_rows(per_frame.mean(axis=1))
    return out


def eval_clips(manifest, clip_len: int, downsample: int) -> np.ndarray:
    return np.stack([sample_clip(r.load_frames(), "eval", clip_len, downsample) for r in manifest])


def zero_shot_probabilities(state: ModelState, registry: DescriptionRegistry, manifest,
                            mode: str = "temporal", clip_len: int = 32,
                            downsample: int = 4) -> np.ndarray:
    if registry.embeddings is None:
        raise ValueError("registry embeddings have not been built")
    z = video_embeddings(state, eval_clips(manifest, clip_len, downsample), mode)
    return classify(z, registry.embeddings, state.temperature)


def zero_shot_eval(state: ModelState, registry: DescriptionRegistry, manifest,
                   mode: str = "temporal", prompt_mode: str = "class_description", *,
                   tokenizer=None, label_key: str = "label", classes=None,
                   clip_len: int = 32, downsample: int = 4) -> ClassificationReport:
    """Classify every record of ``manifest`` and score against ``record.<label_key>``.

    ``classes`` restricts inference to a subset of the registry (for example the
    compound classes only). ``prompt_mode='prompt_ensemble'`` replaces the
    descriptions with averaged class-name templates and needs ``tokenizer``.
    """
    if prompt_mode not in PROMPT_MODES:
        raise ValueError(f"unknown prompt mode {prompt_mode!r}")
    if classes is not None:
        registry = registry.restrict(list(classes))
    if prompt_mode == "prompt_ensemble":
        if tokenizer is None:
            raise ValueError("prompt_ensemble needs a tokenizer")
        if any(e.is_compound for e in registry.entries):
            raise ValueError("prompt_ensemble covers basic classes only")
        registry = prompt_ensemble_registry(registry, state, tokenizer)
    names = registry.names
    index = {n: i for i, n in enumerate(names)}
    labels = []
    for r in manifest:
        lab = getattr(r, label_key)
        if lab not in index:
            raise ClassNotInRegistry(f"record {r.id}: label {lab!r} is not among the classes")
        labels.append(index[lab])
    probs = zero_shot_probabilities(state, registry, manifest, mode, clip_len, downsample)
    return classification_metrics(np.asarray(labels, dtype=np.int64), probs, names,
                                  fold_plan=f"{mode}/{prompt_mode}")
