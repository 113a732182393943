"""Embedding algebra shared by training, inference and evaluation.

All arithmetic is float64. Functions accept anything ``np.asarray`` accepts
and never mutate their inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyClassSet, EmptyInput, ZeroVector

ZERO_NORM = 1e-12
MAX_LOGIT_SCALE = 100.0
INIT_LOGIT_SCALE = 1.0 / 0.07


@dataclass(frozen=True)
class Temperature:
    """Learnable softmax temperature stored as a log logit-scale.

    ``tau = exp(-log_scale)`` and the multiplier ``1/tau`` is clamped to
    ``MAX_LOGIT_SCALE``.
    """

    log_scale: float = math.log(INIT_LOGIT_SCALE)

    @property
    def scale(self) -> float:
        return min(math.exp(self.log_scale), MAX_LOGIT_SCALE)

    @property
    def tau(self) -> float:
        return 1.0 / self.scale

    @classmethod
    def from_tau(cls, tau: float) -> "Temperature":
        if not tau > 0:
            raise ValueError(f"temperature must be positive, got {tau}")
        return cls(-math.log(tau))


def _as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionMismatch(f"expected a non-empty 1-D vector, got shape {arr.shape}")
    return arr


def _as_stack(items) -> np.ndarray:
    arr = np.asarray(items, dtype=np.float64)
    if arr.size == 0 or (arr.ndim >= 1 and arr.shape[0] == 0):
        raise EmptyInput("no embeddings given")
    if arr.ndim != 2:
        raise DimensionMismatch(f"embeddings must share one dimension, got shape {arr.shape}")
    return arr


def normalize(v) -> np.ndarray:
    """Scale ``v`` to unit Euclidean norm."""
    arr = _as_vector(v)
    norm = float(np.linalg.norm(arr))
    if norm < ZERO_NORM:
        raise ZeroVector(f"cannot normalize a vector of norm {norm:.3g}")
    return arr / norm


def normalize_rows(m) -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    if np.any(norms < ZERO_NORM):
        raise ZeroVector("at least one row has (near) zero norm")
    return arr / norms


def cosine_similarity(a, b) -> float:
    a = _as_vector(a)
    b = _as_vector(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimension {a.size} vs {b.size}")
    return float(np.dot(a, b))


def similarity_matrix(rows, cols) -> np.ndarray:
    """Pairwise cosine similarities of unit-norm embeddings, shape (len(rows), len(cols))."""
    r = _as_stack(rows)
    c = _as_stack(cols)
    if r.shape[1] != c.shape[1]:
        raise DimensionMismatch(f"dimension {r.shape[1]} vs {c.shape[1]}")
    return r @ c.T


def softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def classify(video, classes, temperature: Temperature | float | None = None) -> np.ndarray:
    """Class probabilities from a softmax over cosine similarity divided by tau.

    ``video`` may be a single embedding or a (B, D) stack; ``temperature`` may be
    a :class:`Temperature` or a raw tau.
    """
    if temperature is None:
        temperature = Temperature()
    scale = temperature.scale if isinstance(temperature, Temperature) else 1.0 / float(temperature)
    cls = np.asarray(classes, dtype=np.float64)
    if cls.size == 0:
        raise EmptyClassSet("at least one class embedding is required")
    if cls.ndim != 2:
        raise DimensionMismatch(f"class embeddings must be (N, D), got {cls.shape}")
    v = np.asarray(video, dtype=np.float64)
    if v.shape[-1] != cls.shape[1]:
        raise DimensionMismatch(f"video dimension {v.shape[-1]} vs class dimension {cls.shape[1]}")
    return softmax(scale * (v @ cls.T), axis=-1)


def mean_embedding(items: Sequence) -> np.ndarray:
    """Normalized element-wise mean; raises ZeroVector when the items cancel."""
    stack = _as_stack(items)
    return normalize(np.mean(stack, axis=0))


def compose_compound(components: Sequence) -> np.ndarray:
    """Embedding of a compound class: the normalized mean of its components."""
    stack = _as_stack(components)
    # Sum in a fixed (sorted) order so the result is exactly permutation invariant.
    order = np.lexsort(stack.T[::-1])
    return normalize(np.add.reduce(stack[order], axis=0) / stack.shape[0])


AGGREGATION_MODES = ("frame_ensemble", "prompt_ensemble")


def aggregate_embeddings(items: Sequence, mode: str = "frame_ensemble") -> np.ndarray:
    if mode not in AGGREGATION_MODES:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    return mean_embedding(items)
