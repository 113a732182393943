"""Two-layer MLP probe on a frozen video encoder for multi-target regression."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data.clips import eval_windows
from .encoders import ModelState, encode_video
from .errors import DegenerateRange, EmptyInput, InsufficientData, NonFiniteLoss, ShapeMismatch
from .evaluation.folds import make_folds
from .evaluation.metrics import RegressionReport, regression_metrics


# ---------------------------------------------------------------- label scaling


@dataclass(frozen=True)
class SymptomLabels:
    """Per-video target matrix with each column's valid range."""

    values: np.ndarray            # (n, K)
    names: tuple[str, ...]
    ranges: tuple[tuple[float, float], ...]
    raw_ranges: tuple[tuple[float, float], ...] | None = None  # set once scaled

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != len(self.names) or len(self.ranges) != len(self.names):
            raise ShapeMismatch(f"values {v.shape} do not match {len(self.names)} targets")
        object.__setattr__(self, "values", v)
        for j, (lo, hi) in enumerate(self.ranges):
            col = v[:, j]
            if col.size and (col.min() < lo - 1e-9 or col.max() > hi + 1e-9):
                raise ValueError(f"target {self.names[j]!r} has values outside [{lo}, {hi}]")


def _affine(x, src, dst):
    (a, b), (c, d) = src, dst
    if b == a or d == c:
        raise DegenerateRange(f"range {src} -> {dst} is degenerate")
    return c + (np.asarray(x, dtype=np.float64) - a) * (d - c) / (b - a)


def scale_labels(labels: SymptomLabels, targets: Sequence[str], item_range=None) -> SymptomLabels:
    """Map each named total onto the common item range with a min-max affine map."""
    if item_range is None:
        items = [r for n, r in zip(labels.names, labels.ranges) if n not in targets]
        if not items:
            raise DegenerateRange("no item targets to take the common range from")
        item_range = items[0]
    item_range = tuple(map(float, item_range))
    values = labels.values.copy()
    ranges = list(labels.ranges)
    for name in targets:
        j = labels.names.index(name)
        values[:, j] = _affine(values[:, j], ranges[j], item_range)
        ranges[j] = item_range
    return SymptomLabels(values, labels.names, tuple(ranges), labels.ranges)


def unscale_values(values, scaled: SymptomLabels) -> np.ndarray:
    """Invert :func:`scale_labels` for any (n, K) array on the scaled axes."""
    out = np.array(values, dtype=np.float64, copy=True)
    if scaled.raw_ranges is None:
        return out
    for j, (cur, raw) in enumerate(zip(scaled.ranges, scaled.raw_ranges)):
        if cur != raw:
            out[..., j] = _affine(out[..., j], cur, raw)
    return out


@dataclass(frozen=True)
class TargetScaling:
    """How raw symptom vectors map to training targets."""

    names: tuple[str, ...]
    ranges: tuple[tuple[float, float], ...]
    totals: tuple[str, ...] = ()

    def labels(self, values) -> SymptomLabels:
        raw = SymptomLabels(np.atleast_2d(values), self.names, self.ranges)
        return scale_labels(raw, self.totals) if self.totals else raw

    def to_dict(self) -> dict:
        return {"names": list(self.names), "ranges": [list(r) for r in self.ranges],
                "totals": list(self.totals)}

    @classmethod
    def from_dict(cls, d) -> "TargetScaling":
        return cls(tuple(d["names"]), tuple(tuple(map(float, r)) for r in d["ranges"]),
                   tuple(d.get("totals", ())))


# ---------------------------------------------------------------- probe network


@dataclass(frozen=True)
class ProbeConfig:
    hidden: int | None = None  # None: the embedding dimension
    outputs: int = 4
    lr: float = 0.05
    epochs: int = 300
    batch_size: int = 32
    clip_len: int = 16
    downsample: int = 4
    clips_per_video: int = 4
    temporal_crop: bool = True
    seed: int = 0

    def __post_init__(self):
        if (self.hidden is not None and self.hidden < 1) or self.outputs < 1:
            raise ValueError("hidden width and output count must be >= 1")
        if self.lr < 0 or self.epochs < 0 or self.batch_size < 1 or self.clips_per_video < 1:
            raise ValueError("invalid probe optimisation settings")

    def to_dict(self) -> dict:
        return asdict(self)


def init_probe(dim: int, config: ProbeConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([config.seed, 7])
    h = config.hidden or dim
    return {
        "w1": rng.uniform(-1, 1, (dim, h)) / math.sqrt(dim),
        "b1": np.zeros(h),
        "w2": rng.uniform(-1, 1, (h, config.outputs)) / math.sqrt(h),
        "b2": np.zeros(config.outputs),
    }


def probe_head(params, z):
    a = np.tanh(z @ params["w1"] + params["b1"])
    return a @ params["w2"] + params["b2"], (z, a)


def probe_head_backward(params, cache, dout):
    z, a = cache
    da = dout @ params["w2"].T
    dh = da * (1.0 - a * a)
    return {"w1": z.T @ dh, "b1": dh.sum(0), "w2": a.T @ dout, "b2": dout.sum(0)}


def mse_loss(params, z, y):
    out, cache = probe_head(params, z)
    diff = out - y
    loss = float(np.mean(diff * diff))
    return loss, probe_head_backward(params, cache, 2.0 * diff / diff.size)


def probe_forward(frozen_state: ModelState, probe_params, frames) -> np.ndarray:
    """Probe output for one clip (T, F) or a batch (B, T, F); the backbone only runs forward."""
    z = encode_video(frozen_state, frames)
    if z.shape[-1] != probe_params["w1"].shape[0]:
        raise ShapeMismatch(f"probe expects {probe_params['w1'].shape[0]}-d input, got {z.shape[-1]}")
    return probe_head(probe_params, z)[0]


@dataclass
class ClipPrediction:
    video_id: str
    clip_index: int
    values: np.ndarray


def aggregate_clips(preds: Sequence[ClipPrediction]) -> np.ndarray:
    """Video-level prediction: the element-wise mean of its clip predictions."""
    if not preds:
        raise EmptyInput("no clip predictions")
    vid = preds[0].video_id
    k = len(preds[0].values)
    for p in preds:
        if p.video_id != vid or len(p.values) != k:
            raise ShapeMismatch("clip predictions must share the video id and output size")
    return np.mean(np.stack([np.asarray(p.values, dtype=np.float64) for p in preds]), axis=0)


class ClipEmbeddings:
    """Memoised frozen-backbone embeddings of every window of each video."""

    def __init__(self, state: ModelState, clip_len: int, downsample: int):
        self.state = state
        self.clip_len = clip_len
        self.downsample = downsample
        self._windows: dict[str, np.ndarray] = {}

    def all_windows(self, record) -> np.ndarray:
        """(n_windows, D) embeddings for every start offset after downsampling."""
        got = self._windows.get(record.id)
        if got is None:
            x = record.load_frames()[:: self.downsample]
            if x.shape[0] <= self.clip_len:
                pad = np.repeat(x[-1:], self.clip_len - x.shape[0], axis=0)
                clips = np.concatenate([x, pad])[None]
            else:
                idx = np.arange(x.shape[0] - self.clip_len + 1)[:, None] + np.arange(self.clip_len)
                clips = x[idx]
            got = encode_video(self.state, clips)
            self._windows[record.id] = got
        return got

    def eval_clips(self, record) -> np.ndarray:
        """Embeddings of non-overlapping windows, (n_clips, D)."""
        wins = eval_windows(record.load_frames(), self.clip_len, self.downsample)
        return encode_video(self.state, wins)


@dataclass
class ProbeResult:
    params: dict[str, np.ndarray]
    losses: list[float] = field(default_factory=list)


def _labelled(manifest):
    recs = [r for r in manifest if r.symptoms is not None]
    if len(recs) < 2:
        raise InsufficientData(f"{len(recs)} labelled videos; need at least 2")
    return recs


def train_probe(frozen_state: ModelState, manifest, config: ProbeConfig,
                scaling: TargetScaling, cache: ClipEmbeddings | None = None) -> ProbeResult:
    """Fit the probe by mini-batch SGD on mean squared error over all targets.

    Each epoch draws ``clips_per_video`` seeded random windows per video (the
    centred window when ``temporal_crop`` is off).
    """
    recs = _labelled(manifest)
    cache = cache or ClipEmbeddings(frozen_state, config.clip_len, config.downsample)
    targets = scaling.labels(np.array([r.symptoms for r in recs])).values
    if targets.shape[1] != config.outputs:
        raise ShapeMismatch(f"{targets.shape[1]} targets but probe has {config.outputs} outputs")
    params = init_probe(frozen_state.config.dim, config)
    windows = [cache.all_windows(r) for r in recs]
    losses = []
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        z, y = [], []
        for w, t in zip(windows, targets):
            n = w.shape[0]
            if config.temporal_crop:
                picks = rng.integers(0, n, size=config.clips_per_video)
            else:
                picks = np.full(config.clips_per_video, (n - 1) // 2)
            z.append(w[picks])
            y.append(np.repeat(t[None], len(picks), axis=0))
        z, y = np.concatenate(z), np.concatenate(y)
        order = rng.permutation(len(z))
        epoch_loss = []
        for start in range(0, len(z), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = mse_loss(params, z[idx], y[idx])
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"probe loss is {loss} at epoch {epoch}")
            if config.lr:
                params = {k: v - config.lr * grads[k] for k, v in params.items()}
            epoch_loss.append(loss * len(idx))
        losses.append(float(sum(epoch_loss) / len(z)))
    return ProbeResult(params, losses)


def predict_videos(frozen_state: ModelState, probe_params, manifest, scaling: TargetScaling,
                   cache: ClipEmbeddings) -> dict[str, np.ndarray]:
    """Unscaled video-level predictions from averaged non-overlapping clip predictions."""
    scaled = scaling.labels(np.zeros((0, len(scaling.names))))
    out = {}
    for r in manifest:
        clip_out = probe_head(probe_params, cache.eval_clips(r))[0]
        preds = [ClipPrediction(r.id, i, v) for i, v in enumerate(clip_out)]
        out[r.id] = unscale_values(aggregate_clips(preds), scaled)
    return out


@dataclass
class LopoResult:
    report: RegressionReport
    predictions: dict[str, np.ndarray]
    truth: dict[str, np.ndarray]
    folds: object
    train_patients: dict = field(default_factory=dict)  # fold key -> patients seen in training


def evaluate_lopo(frozen_state: ModelState, manifest, config: ProbeConfig,
                  scaling: TargetScaling, threads: int = 1) -> LopoResult:
    """Leave-one-patient-out: train on all other patients, predict the held-out videos."""
    recs = _labelled(manifest)
    sub = manifest.subset(recs)
    folds = make_folds(sub, "leave_one_patient_out")
    if folds.n_folds < 2:
        raise InsufficientData("leave-one-patient-out needs at least two patients")
    cache = ClipEmbeddings(frozen_state, config.clip_len, config.downsample)
    by_id = sub.by_id()
    for r in recs:  # fill the cache before any worker threads start
        cache.all_windows(r)

    def run(fold):
        train_set = sub.select_ids(folds.train_ids(fold))
        test_set = sub.select_ids(folds.eval_ids(fold))
        fitted = train_probe(frozen_state, train_set, config, scaling, cache)
        preds = predict_videos(frozen_state, fitted.params, test_set, scaling, cache)
        return preds, sorted({r.patient for r in train_set})

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(run, range(folds.n_folds)))
    else:
        outputs = [run(f) for f in range(folds.n_folds)]
    predictions, seen = {}, {}
    for fold, (preds, patients) in enumerate(outputs):
        predictions.update(preds)
        seen[folds.keys[fold]] = patients
    ids = [r.id for r in recs]
    truth = {i: np.asarray(by_id[i].symptoms, dtype=np.float64) for i in ids}
    report = regression_metrics(np.stack([truth[i] for i in ids]),
                                np.stack([predictions[i] for i in ids]), scaling.names)
    return LopoResult(report, predictions, truth, folds, seen)


# ---------------------------------------------------------------- planted corpus


def planted_response_corpus(state: ModelState, n_patients: int = 20, videos_per_patient: int = 3,
                            n_frames: int = 192, n_items: int = 3, item_range=(1.0, 7.0),
                            noise: float = 0.1, clip_len: int = 16, downsample: int = 4,
                            seed: int = 0):
    """Videos whose symptom targets are an exact linear function of their embedding.

    Each video is a stationary latent (patient part plus video part) with
    per-frame noise. Its reference embedding is the normalized mean of the
    frozen encoder's non-overlapping clip embeddings; items are a random
    linear readout of that embedding, centred and scaled to fill most of
    ``item_range``, and ``total`` is their sum on its own wider range.

    Returns ``(manifest, scaling, key)`` where ``key`` holds the readout.
    """
    from .data.manifest import manifest_from_arrays

    if n_patients < 2 or videos_per_patient < 1 or n_items < 1:
        raise InsufficientData("need at least two patients with one video each")
    rng = np.random.default_rng([seed, 11])
    f = state.config.feature_dim
    lo, hi = map(float, item_range)
    if hi <= lo:
        raise DegenerateRange(f"item range {item_range} is degenerate")
    items = []
    for p in range(n_patients):
        base = rng.normal(size=f)
        for v in range(videos_per_patient):
            latent = base + 0.5 * rng.normal(size=f)
            frames = latent + noise * rng.normal(size=(n_frames, f))
            items.append({"id": f"p{p:02d}-v{v}", "patient": f"p{p:02d}", "frames": frames})
    man = manifest_from_arrays(items, f)
    cache = ClipEmbeddings(state, clip_len, downsample)
    emb = np.stack([cache.eval_clips(r).mean(axis=0) for r in man])
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    readout = rng.normal(size=(n_items, emb.shape[1]))
    s = (emb - emb.mean(axis=0)) @ readout.T
    scale = 0.45 * (hi - lo) / np.abs(s).max(axis=0)
    y = (lo + hi) / 2 + s * scale
    total = y.sum(axis=1, keepdims=True)
    names = tuple(f"item{i + 1}" for i in range(n_items)) + ("total",)
    for r, row in zip(man, np.hstack([y, total])):
        r.symptoms = row.tolist()
    man.targets = list(names)
    scaling = TargetScaling(names, ((lo, hi),) * n_items + ((n_items * lo, n_items * hi),),
                            ("total",))
    key = {"readout": readout, "scale": scale, "offset": (lo + hi) / 2, "mean": emb.mean(axis=0)}
    return man, scaling, key
