"""Toy video/text encoders with hand-written backward passes.

The video encoder is a per-frame MLP followed by a pre-norm transformer over
``[cls, frame_1 .. frame_T]``; the CLS row of the last layer, normalized, is the
video embedding. The text encoder mean-pools token embeddings and runs a
two-layer tanh MLP. Every forward function returns a cache that the matching
backward function consumes, so gradients for the contrastive loss (and for
gradient checks) are exact and dependency free.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .embedding import INIT_LOGIT_SCALE, MAX_LOGIT_SCALE, Temperature
from .errors import (
    EmptySequence,
    NonFiniteActivation,
    ShapeMismatch,
    UnknownToken,
    ZeroVector,
)

LN_EPS = 1e-5
GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class EncoderConfig:
    feature_dim: int
    vocab_size: int
    dim: int = 32
    heads: int = 2
    layers: int = 2
    ff_mult: int = 4
    max_frames: int = 32
    dropout: float = 0.0

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if min(self.feature_dim, self.vocab_size, self.dim, self.max_frames) < 1:
            raise ValueError("feature_dim, vocab_size, dim and max_frames must be positive")
        if self.dropout != 0.0:
            raise ValueError("dropout is not supported; keep it at 0")

    @property
    def ff_dim(self) -> int:
        return self.ff_mult * self.dim

    def to_dict(self) -> dict:
        return asdict(self)


BACKBONE_PREFIXES = ("frame.", "text.")


def is_backbone(name: str) -> bool:
    return name.startswith(BACKBONE_PREFIXES)


def _layer_shapes(cfg: EncoderConfig, i: int) -> dict[str, tuple]:
    d, f = cfg.dim, cfg.ff_dim
    p = f"temporal.{i}."
    return {
        p + "ln1_g": (d,), p + "ln1_b": (d,),
        p + "wq": (d, d), p + "bq": (d,),
        p + "wk": (d, d), p + "bk": (d,),
        p + "wv": (d, d), p + "bv": (d,),
        p + "wo": (d, d), p + "bo": (d,),
        p + "ln2_g": (d,), p + "ln2_b": (d,),
        p + "ff_w1": (d, f), p + "ff_b1": (f,),
        p + "ff_w2": (f, d), p + "ff_b2": (d,),
    }


def param_shapes(cfg: EncoderConfig) -> dict[str, tuple]:
    d = cfg.dim
    shapes = {
        "frame.w1": (cfg.feature_dim, d), "frame.b1": (d,),
        "frame.w2": (d, d), "frame.b2": (d,),
        "text.embed": (cfg.vocab_size, d),
        "text.w1": (d, d), "text.b1": (d,),
        "text.w2": (d, d), "text.b2": (d,),
    }
    for i in range(cfg.layers):
        shapes.update(_layer_shapes(cfg, i))
    shapes.update({"cls": (d,), "pos": (cfg.max_frames + 1, d), "log_scale": ()})
    return shapes


@dataclass(frozen=True)
class ModelState:
    """All trainable parameters plus the configuration that shapes them.

    Treated as immutable: training produces new states instead of editing
    arrays in place.
    """

    config: EncoderConfig
    params: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        expected = param_shapes(self.config)
        if set(expected) != set(self.params):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ShapeMismatch(f"parameter set mismatch: missing={missing} extra={extra}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeMismatch(f"{name}: expected {shape}, got {self.params[name].shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    @property
    def temperature(self) -> Temperature:
        return Temperature(float(self.params["log_scale"]))

    def replace(self, **updates: np.ndarray) -> "ModelState":
        params = dict(self.params)
        for k, v in updates.items():
            params[k] = np.asarray(v, dtype=np.float64)
        return ModelState(self.config, params)

    def copy(self) -> "ModelState":
        return ModelState(self.config, {k: v.copy() for k, v in self.params.items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())

    def fingerprint(self, names: Sequence[str] | None = None) -> str:
        h = hashlib.sha256()
        for k in sorted(names if names is not None else self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k], dtype="<f8").tobytes())
        return h.hexdigest()

    def backbone_fingerprint(self) -> str:
        return self.fingerprint([k for k in self.params if is_backbone(k)])


def init_state(cfg: EncoderConfig, seed: int = 0) -> ModelState:
    """Seeded initial parameters.

    Weight matrices are uniform in +-1/sqrt(fan_in); token embeddings are
    uniform with unit variance; biases, the CLS token and the positional
    embeddings start at zero; layer-norm gains at one; 1/tau at 1/0.07.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name == "log_scale":
            params[name] = np.array(math.log(INIT_LOGIT_SCALE))
        elif name == "text.embed":
            params[name] = rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), shape)
        elif leaf.endswith("_g"):
            params[name] = np.ones(shape)
        elif len(shape) == 2 and name != "pos":
            bound = 1.0 / math.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, shape)
        else:
            params[name] = np.zeros(shape)
    return ModelState(cfg, params)


# ---------------------------------------------------------------- primitives


def _linear_back(x, w, dy):
    """Gradients of ``y = x @ w + b`` for inputs of any leading shape."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, x2.T @ dy2, dy2.sum(axis=0)


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _layer_norm_back(dy, cache):
    xhat, inv, g = cache
    n = xhat.shape[-1]
    dxhat = dy * g
    dx = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(-1, keepdims=True))
    flat = lambda a: a.reshape(-1, n)
    return dx, (flat(dy) * flat(xhat)).sum(0), flat(dy).sum(0)


def _gelu(x):
    t = np.tanh(GELU_C * (x + 0.044715 * x**3))
    return 0.5 * x * (1.0 + t), t


def _gelu_back(x, t, dy):
    dt = (1.0 - t * t) * GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def _normalize_rows(y):
    norm = np.linalg.norm(y, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise ZeroVector("encoder produced a zero output vector")
    return y / norm, norm


def _normalize_rows_back(z, norm, dz):
    return (dz - z * (z * dz).sum(-1, keepdims=True)) / norm


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteActivation(f"non-finite values in {what}")


# ---------------------------------------------------------------- frame encoder


def _as_frames(state: ModelState, frames) -> np.ndarray:
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim < 2 or x.shape[-1] != state.config.feature_dim:
        raise ShapeMismatch(
            f"frames must be (..., T, {state.config.feature_dim}), got {x.shape}")
    if x.shape[-2] < 1:
        raise ShapeMismatch("a clip needs at least one frame")
    if x.shape[-2] > state.config.max_frames:
        raise ShapeMismatch(f"clip has {x.shape[-2]} frames, maximum is {state.config.max_frames}")
    _check_finite(x, "input frames")
    return x


def frame_forward(state: ModelState, x):
    p = state.params
    a = np.tanh(x @ p["frame.w1"] + p["frame.b1"])
    y = a @ p["frame.w2"] + p["frame.b2"]
    return y, (x, a)


def frame_backward(state: ModelState, cache, dy, grads):
    p = state.params
    x, a = cache
    da, grads["frame.w2"], grads["frame.b2"] = _linear_back(a, p["frame.w2"], dy)
    dh = da * (1.0 - a * a)
    dx, grads["frame.w1"], grads["frame.b1"] = _linear_back(x, p["frame.w1"], dh)
    return dx


def encode_frames(state: ModelState, frames) -> np.ndarray:
    """Per-frame projection F -> D; input (T, F) or (B, T, F)."""
    return frame_forward(state, _as_frames(state, frames))[0]


# ---------------------------------------------------------------- temporal transformer


def _attention(state, i, n):
    p = state.params
    pre = f"temporal.{i}."
    bsz, s, d = n.shape
    h = state.config.heads
    dh = d // h
    split = lambda t: t.reshape(bsz, s, h, dh).transpose(0, 2, 1, 3)
    q = split(n @ p[pre + "wq"] + p[pre + "bq"])
    k = split(n @ p[pre + "wk"] + p[pre + "bk"])
    v = split(n @ p[pre + "wv"] + p[pre + "bv"])
    scores = q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh)
    scores = scores - scores.max(-1, keepdims=True)
    att = np.exp(scores)
    att /= att.sum(-1, keepdims=True)
    o = (att @ v).transpose(0, 2, 1, 3).reshape(bsz, s, d)
    out = o @ p[pre + "wo"] + p[pre + "bo"]
    return out, (n, q, k, v, att, o)


def _attention_back(state, i, cache, dout, grads):
    p = state.params
    pre = f"temporal.{i}."
    n, q, k, v, att, o = cache
    bsz, s, d = n.shape
    h = state.config.heads
    dh = d // h
    do, grads[pre + "wo"], grads[pre + "bo"] = _linear_back(o, p[pre + "wo"], dout)
    do = do.reshape(bsz, s, h, dh).transpose(0, 2, 1, 3)
    datt = do @ v.transpose(0, 1, 3, 2)
    dv = att.transpose(0, 1, 3, 2) @ do
    dscores = att * (datt - (datt * att).sum(-1, keepdims=True)) / math.sqrt(dh)
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    merge = lambda t: t.transpose(0, 2, 1, 3).reshape(bsz, s, d)
    dn = np.zeros_like(n)
    for name, dt in (("q", dq), ("k", dk), ("v", dv)):
        dx, grads[pre + "w" + name], grads[pre + "b" + name] = _linear_back(
            n, p[pre + "w" + name], merge(dt))
        dn += dx
    return dn


def _block(state, i, x):
    p = state.params
    pre = f"temporal.{i}."
    n1, ln1 = _layer_norm(x, p[pre + "ln1_g"], p[pre + "ln1_b"])
    att_out, att_cache = _attention(state, i, n1)
    x = x + att_out
    n2, ln2 = _layer_norm(x, p[pre + "ln2_g"], p[pre + "ln2_b"])
    hpre = n2 @ p[pre + "ff_w1"] + p[pre + "ff_b1"]
    hact, t = _gelu(hpre)
    x = x + hact @ p[pre + "ff_w2"] + p[pre + "ff_b2"]
    return x, (ln1, att_cache, ln2, n2, hpre, t, hact)


def _block_back(state, i, cache, dx, grads):
    p = state.params
    pre = f"temporal.{i}."
    ln1, att_cache, ln2, n2, hpre, t, hact = cache
    dh, grads[pre + "ff_w2"], grads[pre + "ff_b2"] = _linear_back(hact, p[pre + "ff_w2"], dx)
    dh = _gelu_back(hpre, t, dh)
    dn2, grads[pre + "ff_w1"], grads[pre + "ff_b1"] = _linear_back(n2, p[pre + "ff_w1"], dh)
    dmid, grads[pre + "ln2_g"], grads[pre + "ln2_b"] = _layer_norm_back(dn2, ln2)
    dx = dx + dmid
    dn1 = _attention_back(state, i, att_cache, dx, grads)
    dmid, grads[pre + "ln1_g"], grads[pre + "ln1_b"] = _layer_norm_back(dn1, ln1)
    return dx + dmid


def temporal_forward(state: ModelState, feats):
    """feats: (B, T, D) frame features -> (B, D) unit CLS embeddings and a cache."""
    p = state.params
    bsz, t, d = feats.shape
    if d != state.config.dim:
        raise ShapeMismatch(f"frame features have dim {d}, model dim is {state.config.dim}")
    if not 1 <= t <= state.config.max_frames:
        raise ShapeMismatch(f"clip length {t} outside [1, {state.config.max_frames}]")
    cls = np.broadcast_to(p["cls"], (bsz, 1, d))
    x = np.concatenate([cls, feats], axis=1) + p["pos"][: t + 1]
    caches = []
    for i in range(state.config.layers):
        x, c = _block(state, i, x)
        caches.append(c)
    _check_finite(x, "temporal encoder output")
    z, norm = _normalize_rows(x[:, 0, :])
    return z, (t, caches, z, norm, x.shape)


def temporal_backward(state: ModelState, cache, dz, grads):
    t, caches, z, norm, shape = cache
    dx = np.zeros(shape)
    dx[:, 0, :] = _normalize_rows_back(z, norm, dz)
    for i in reversed(range(state.config.layers)):
        dx = _block_back(state, i, caches[i], dx, grads)
    grads["pos"] = np.zeros_like(state.params["pos"])
    grads["pos"][: t + 1] = dx.sum(axis=0)
    grads["cls"] = dx[:, 0, :].sum(axis=0)
    return dx[:, 1:, :]


def temporal_encode(state: ModelState, frame_feats) -> np.ndarray:
    """CLS readout for one (T, D) or a batch (B, T, D) of frame-feature sequences."""
    f = np.asarray(frame_feats, dtype=np.float64)
    single = f.ndim == 2
    if single:
        f = f[None]
    if f.ndim != 3:
        raise ShapeMismatch(f"expected (T, D) or (B, T, D), got {f.shape}")
    z, _ = temporal_forward(state, f)
    return z[0] if single else z


# ---------------------------------------------------------------- video encoder


def video_forward(state: ModelState, frames):
    x = _as_frames(state, frames)
    if x.ndim == 2:
        x = x[None]
    feats, fcache = frame_forward(state, x)
    z, tcache = temporal_forward(state, feats)
    return z, (fcache, tcache)


def video_backward(state: ModelState, cache, dz, grads):
    fcache, tcache = cache
    dfeats = temporal_backward(state, tcache, dz, grads)
    return frame_backward(state, fcache, dfeats, grads)


def encode_video(state: ModelState, frames) -> np.ndarray:
    """Video embedding(s): ``temporal_encode(encode_frames(frames))``."""
    return temporal_encode(state, encode_frames(state, frames))


def encode_frames_individually(state: ModelState, frames) -> np.ndarray:
    """Run each frame through the video encoder as a one-frame clip: (T, F) -> (T, D)."""
    x = _as_frames(state, frames)
    return encode_video(state, x.reshape(-1, 1, x.shape[-1])).reshape(x.shape[:-1] + (-1,))


# ---------------------------------------------------------------- text encoder


def _token_arrays(state: ModelState, token_seqs):
    seqs = []
    for seq in token_seqs:
        arr = np.asarray(seq, dtype=np.int64).ravel()
        if arr.size == 0:
            raise EmptySequence("token sequence is empty")
        bad = arr[(arr < 0) | (arr >= state.config.vocab_size)]
        if bad.size:
            raise UnknownToken(f"token id {int(bad[0])} outside vocabulary of {state.config.vocab_size}")
        seqs.append(arr)
    if not seqs:
        raise EmptySequence("no token sequences given")
    return seqs


def text_forward(state: ModelState, token_seqs):
    p = state.params
    seqs = _token_arrays(state, token_seqs)
    lengths = np.array([len(s) for s in seqs])
    flat = np.concatenate(seqs)
    seg = np.repeat(np.arange(len(seqs)), lengths)
    pooled = np.zeros((len(seqs), state.config.dim))
    np.add.at(pooled, seg, p["text.embed"][flat])
    pooled /= lengths[:, None]
    a = np.tanh(pooled @ p["text.w1"] + p["text.b1"])
    y = a @ p["text.w2"] + p["text.b2"]
    z, norm = _normalize_rows(y)
    return z, (flat, seg, lengths, pooled, a, z, norm)


def text_backward(state: ModelState, cache, dz, grads):
    p = state.params
    flat, seg, lengths, pooled, a, z, norm = cache
    dy = _normalize_rows_back(z, norm, dz)
    da, grads["text.w2"], grads["text.b2"] = _linear_back(a, p["text.w2"], dy)
    dh = da * (1.0 - a * a)
    dpooled, grads["text.w1"], grads["text.b1"] = _linear_back(pooled, p["text.w1"], dh)
    dembed = np.zeros_like(p["text.embed"])
    np.add.at(dembed, flat, (dpooled / lengths[:, None])[seg])
    grads["text.embed"] = dembed


def encode_text(state: ModelState, tokens) -> np.ndarray:
    """Unit-norm embedding for one token sequence."""
    return text_forward(state, [tokens])[0][0]


def encode_texts(state: ModelState, token_seqs) -> np.ndarray:
    return text_forward(state, token_seqs)[0]


def zero_grads(state: ModelState) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in state.params.items()}


def clamp_log_scale(value: float) -> float:
    return min(float(value), math.log(MAX_LOGIT_SCALE))
