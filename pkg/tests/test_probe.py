import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import max_rel_err, small_config
from zsfer.encoders import encode_video, init_state
from zsfer.errors import DegenerateRange, EmptyInput, InsufficientData, ShapeMismatch
from zsfer.probe import (
    ClipEmbeddings,
    ClipPrediction,
    ProbeConfig,
    SymptomLabels,
    TargetScaling,
    aggregate_clips,
    evaluate_lopo,
    init_probe,
    mse_loss,
    planted_response_corpus,
    probe_forward,
    probe_head,
    scale_labels,
    train_probe,
    unscale_values,
)


@pytest.fixture(scope="module")
def frozen():
    return init_state(small_config(feature_dim=6, dim=12, max_frames=8), seed=3)


@pytest.fixture(scope="module")
def planted(frozen):
    return planted_response_corpus(frozen, n_patients=6, videos_per_patient=2, n_frames=64,
                                   clip_len=8, downsample=2, seed=1)


FAST = dict(clip_len=8, downsample=2, epochs=20, hidden=8)


# ---------------------------------------------------------------- scaling

def test_total_scaling_examples():
    lab = SymptomLabels(np.array([[1.0, 7.0], [7.0, 49.0], [4.0, 28.0]]), ("item", "total"),
                        ((1, 7), (7, 49)))
    s = scale_labels(lab, ["total"])
    np.testing.assert_allclose(s.values[:, 1], [1.0, 7.0, 4.0])
    np.testing.assert_array_equal(s.values[:, 0], lab.values[:, 0])
    assert s.ranges == ((1, 7), (1.0, 7.0))
    np.testing.assert_allclose(unscale_values(s.values, s), lab.values, atol=1e-12)


@given(st.lists(st.floats(7, 49), min_size=1, max_size=20))
def test_scaling_round_trip_and_range(raw):
    lab = SymptomLabels(np.column_stack([np.full(len(raw), 3.0), raw]), ("a", "t"),
                        ((1, 7), (7, 49)))
    s = scale_labels(lab, ["t"])
    assert np.all((s.values[:, 1] >= 1 - 1e-12) & (s.values[:, 1] <= 7 + 1e-12))
    np.testing.assert_allclose(unscale_values(s.values, s), lab.values, atol=1e-12)


def test_scaling_errors():
    with pytest.raises(DegenerateRange):
        scale_labels(SymptomLabels(np.ones((1, 2)), ("a", "t"), ((1, 7), (1, 1))), ["t"])
    with pytest.raises(ValueError):
        SymptomLabels(np.array([[9.0]]), ("a",), ((1, 7),))
    sc = TargetScaling(("a", "t"), ((1, 7), (2, 14)), ("t",))
    assert TargetScaling.from_dict(sc.to_dict()) == sc


# ---------------------------------------------------------------- probe network

def test_zero_weight_probe_outputs_bias(frozen):
    p = {k: np.zeros_like(v) for k, v in init_probe(12, ProbeConfig(outputs=3)).items()}
    p["b2"] = np.array([1.0, -2.0, 0.5])
    frames = np.random.default_rng(0).normal(size=(5, 8, 6))
    np.testing.assert_array_equal(probe_forward(frozen, p, frames), np.tile(p["b2"], (5, 1)))
    with pytest.raises(ShapeMismatch):
        probe_forward(frozen, init_probe(7, ProbeConfig()), frames)


def test_probe_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    p = init_probe(6, ProbeConfig(hidden=5, outputs=3, seed=4))
    p = {k: v + rng.normal(0, 0.3, v.shape) for k, v in p.items()}
    z, y = rng.normal(size=(7, 6)), rng.normal(size=(7, 3))
    _, grads = mse_loss(p, z, y)
    for name, v in p.items():
        num = np.zeros(v.shape)
        for i in np.ndindex(v.shape):
            old = v[i]
            v[i] = old + 1e-5
            up = mse_loss(p, z, y)[0]
            v[i] = old - 1e-5
            down = mse_loss(p, z, y)[0]
            v[i] = old
            num[i] = (up - down) / 2e-5
        assert max_rel_err(grads[name], num) < 1e-3, name


# ---------------------------------------------------------------- aggregation

def test_aggregate_examples():
    np.testing.assert_array_equal(aggregate_clips([ClipPrediction("v", 0, [1.0, 3.0])]), [1, 3])
    np.testing.assert_array_equal(
        aggregate_clips([ClipPrediction("v", 0, [1.0, 3.0]), ClipPrediction("v", 1, [3.0, 5.0])]),
        [2.0, 4.0])
    vals = np.random.default_rng(0).normal(size=(100, 4))
    acc = np.zeros(4)
    for row in vals:
        acc += row
    np.testing.assert_allclose(aggregate_clips([ClipPrediction("v", i, r)
                                                for i, r in enumerate(vals)]), acc / 100,
                               atol=1e-12)
    with pytest.raises(EmptyInput):
        aggregate_clips([])
    with pytest.raises(ShapeMismatch):
        aggregate_clips([ClipPrediction("v", 0, [1.0]), ClipPrediction("w", 1, [1.0])])


# ---------------------------------------------------------------- training

def test_training_leaves_backbone_untouched(frozen, planted):
    man, scaling, _ = planted
    before = frozen.fingerprint()
    res = train_probe(frozen, man, ProbeConfig(**FAST), scaling)
    assert frozen.fingerprint() == before
    assert res.losses[-1] < res.losses[0]


def test_zero_lr_and_seeded_reruns(frozen, planted):
    man, scaling, _ = planted
    cfg = ProbeConfig(lr=0.0, **FAST)
    res = train_probe(frozen, man, cfg, scaling)
    for k, v in init_probe(12, cfg).items():
        assert res.params[k].tobytes() == v.tobytes()
    cfg = ProbeConfig(**FAST, seed=5)
    a, b = train_probe(frozen, man, cfg, scaling), train_probe(frozen, man, cfg, scaling)
    assert a.losses == b.losses
    assert train_probe(frozen, man, ProbeConfig(**FAST, seed=6), scaling).losses != a.losses


def test_training_errors(frozen, planted):
    man, scaling, _ = planted
    with pytest.raises(InsufficientData):
        train_probe(frozen, man.subset(man.records[:1]), ProbeConfig(**FAST), scaling)
    with pytest.raises(ShapeMismatch):
        train_probe(frozen, man, ProbeConfig(outputs=2, **FAST), scaling)


def test_clip_cache_matches_direct_encoding(frozen, planted):
    man, _, _ = planted
    cache = ClipEmbeddings(frozen, 8, 2)
    r = man.records[0]
    x = r.frames[::2]
    w = cache.all_windows(r)
    assert w.shape[0] == x.shape[0] - 7
    np.testing.assert_allclose(w[3], encode_video(frozen, x[3:11]), atol=1e-13)
    np.testing.assert_allclose(cache.eval_clips(r)[1], encode_video(frozen, x[8:16]), atol=1e-13)


def test_lopo_partition_and_metrics(frozen, planted):
    man, scaling, _ = planted
    res = evaluate_lopo(frozen, man, ProbeConfig(**FAST), scaling, threads=2)
    assert sorted(res.predictions) == sorted(man.ids())
    for fold, key in enumerate(res.folds.keys):
        assert key not in res.train_patients[key]
        assert len(res.train_patients[key]) == 5
    assert np.all(res.report.mae <= res.report.rmse + 1e-12)
    serial = evaluate_lopo(frozen, man, ProbeConfig(**FAST), scaling, threads=1)
    assert serial.report.to_csv() == res.report.to_csv()


def test_clip_averaging_does_not_hurt(frozen):
    gaps = []
    for seed in range(10):
        man, scaling, _ = planted_response_corpus(frozen, n_patients=4, videos_per_patient=2,
                                                  n_frames=64, clip_len=8, downsample=2,
                                                  seed=seed)
        cfg = ProbeConfig(**FAST, seed=seed)
        cache = ClipEmbeddings(frozen, 8, 2)
        params = train_probe(frozen, man, cfg, scaling, cache).params
        targets = scaling.labels(np.array([r.symptoms for r in man])).values
        video_mse, clip_mse = [], []
        for r, y in zip(man, targets):
            clips = probe_head(params, cache.eval_clips(r))[0]
            video_mse.append(np.mean((clips.mean(0) - y) ** 2))
            clip_mse.append(np.mean((clips - y) ** 2))
        gaps.append(np.mean(clip_mse) - np.mean(video_mse))
    assert min(gaps) >= -1e-12
