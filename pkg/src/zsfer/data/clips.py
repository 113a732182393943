from __future__ import annotations

import numpy as np

from ..errors import EmptyVideo

CLIP_POLICIES = ("eval", "train")


def _pad(frames: np.ndarray, length: int) -> np.ndarray:
    if frames.shape[0] >= length:
        return frames
    tail = np.repeat(frames[-1:], length - frames.shape[0], axis=0)
    return np.concatenate([frames, tail], axis=0)


def sample_clip(frames, policy: str, length: int = 32, downsample: int = 4, seed=0) -> np.ndarray:
    """Downsample a (T_raw, F) video then cut a ``length``-frame window.

    ``eval`` takes the centred window, ``train`` a seeded random one. Videos
    shorter than ``length`` after downsampling are padded by repeating their
    last frame, so the result always has exactly ``length`` rows.
    """
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyVideo(f"video has no frames (shape {x.shape})")
    if length < 1 or downsample < 1:
        raise ValueError("length and downsample must be >= 1")
    if policy not in CLIP_POLICIES:
        raise ValueError(f"unknown clip policy {policy!r}")
    x = x[::downsample]
    extra = x.shape[0] - length
    if extra <= 0:
        return _pad(x, length)
    if policy == "eval":
        start = extra // 2
    else:
        start = int(np.random.default_rng(seed).integers(0, extra + 1))
    return x[start:start + length]


def eval_windows(frames, length: int = 32, downsample: int = 4) -> np.ndarray:
    """Non-overlapping ``length``-frame windows covering a long video, (n_clips, length, F).

    A trailing remainder shorter than ``length`` is dropped unless it is the
    only material, in which case it is padded.
    """
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyVideo(f"video has no frames (shape {x.shape})")
    x = x[::downsample]
    n = x.shape[0] // length
    if n == 0:
        return _pad(x, length)[None]
    return x[: n * length].reshape(n, length, x.shape[1])
