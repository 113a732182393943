import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import max_rel_err, numeric_grad, random_batch, random_state, small_config
from zsfer.data.checkpoint import load_checkpoint
from zsfer.data.synthetic import SyntheticCorpusConfig, default_classes, generate_synthetic_corpus
from zsfer.encoders import init_state, is_backbone
from zsfer.errors import InsufficientData, NonFiniteLoss
from zsfer.tokenizer import Tokenizer
from zsfer.trainer import (
    Batch,
    TrainConfig,
    contrastive_loss,
    embedding_loss,
    loss_value,
    symmetric_cross_entropy,
    train,
    train_step,
    training_pairs,
    write_loss_csv,
)


@pytest.fixture(scope="module")
def cfg():
    return small_config()


def test_train_config_validation():
    assert TrainConfig().head_lr == 1e-3 and TrainConfig().backbone_lr == 1e-6
    assert TrainConfig().max_clip_len == 32 and TrainConfig().temporal_downsample == 4
    with pytest.raises(ValueError):
        TrainConfig(head_lr=-1)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)


# ---------------------------------------------------------------- loss values

def test_single_pair_loss_is_zero(cfg):
    b = random_batch(cfg, 1, 3, 0)
    assert contrastive_loss(random_state(cfg, 0), b)[0] == 0.0


def test_identical_pairs_give_log_b(cfg):
    st = random_state(cfg, 1)
    frames = np.repeat(np.random.default_rng(0).normal(size=(1, 3, cfg.feature_dim)), 3, axis=0)
    b = Batch(frames, [[1, 2]] * 3)
    assert contrastive_loss(st, b)[0] == pytest.approx(math.log(3), abs=1e-12)


def test_cross_entropy_gradient_against_fd():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(5, 5)) * 3
    _, g = symmetric_cross_entropy(logits)
    num = np.zeros_like(logits)
    for idx in np.ndindex(5, 5):
        p, m = logits.copy(), logits.copy()
        p[idx] += 1e-5
        m[idx] -= 1e-5
        num[idx] = (symmetric_cross_entropy(p)[0] - symmetric_cross_entropy(m)[0]) / 2e-5
    assert max_rel_err(g, num) < 1e-6


@given(st.integers(1, 12), st.integers(2, 8), st.floats(-2, 4.6), st.integers(0, 2**32 - 1))
def test_loss_nonnegative_and_symmetric(b, d, log_scale, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(b, d))
    t = rng.normal(size=(b, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    l1 = embedding_loss(v, t, log_scale)[0]
    l2 = embedding_loss(t, v, log_scale)[0]
    assert l1 >= 0
    assert abs(l1 - l2) < 1e-12


def test_batch_order_invariance(cfg):
    st = random_state(cfg, 2)
    b = random_batch(cfg, 6, 3, 2)
    ref = loss_value(st, b)
    rng = np.random.default_rng(0)
    for _ in range(10):
        assert abs(loss_value(st, b.permuted(rng.permutation(6))) - ref) < 1e-9


def test_gradients_match_fd_at_two_points(cfg):
    # the acceptance suite repeats this at ten points
    for seed in (11, 12):
        st = random_state(cfg, seed)
        b = random_batch(cfg, 4, 4, seed)
        _, g = contrastive_loss(st, b)
        assert set(g) == set(st.params)
        for name in st.params:
            num = numeric_grad(lambda s: loss_value(s, b), st, name)
            assert max_rel_err(g[name], num) < 1e-3, name


def test_log_scale_gradient_vanishes_at_clamp(cfg):
    st = random_state(cfg, 3).replace(log_scale=np.array(math.log(100.0) + 0.5))
    _, g = contrastive_loss(st, random_batch(cfg, 4, 2, 3))
    assert g["log_scale"] == 0.0


# ---------------------------------------------------------------- train_step

def test_zero_learning_rates_leave_state_bit_identical(cfg):
    st = random_state(cfg, 4).replace(log_scale=np.array(math.log(1 / 0.07)))
    new, _ = train_step(st, random_batch(cfg, 4, 3, 4), TrainConfig(head_lr=0, backbone_lr=0))
    assert new.fingerprint() == st.fingerprint()


def test_small_step_does_not_increase_loss(cfg):
    for seed in range(5):
        st = random_state(cfg, seed)
        b = random_batch(cfg, 4, 3, seed)
        before = loss_value(st, b)
        new, loss = train_step(st, b, TrainConfig(head_lr=1e-4, backbone_lr=1e-4))
        assert loss == before
        assert loss_value(new, b) <= before + 1e-9


def test_backbone_rate_zero_freezes_encoders(cfg):
    st = random_state(cfg, 5)
    new, _ = train_step(st, random_batch(cfg, 4, 3, 5), TrainConfig(head_lr=1e-2, backbone_lr=0))
    for name in st.params:
        if is_backbone(name):
            np.testing.assert_array_equal(new[name], st[name])
    assert not np.array_equal(new["temporal.0.wq"], st["temporal.0.wq"])


def test_clamp_applied_after_step(cfg):
    st = random_state(cfg, 6).replace(log_scale=np.array(math.log(100.0)))
    b = random_batch(cfg, 4, 3, 6)
    new, _ = train_step(st, b, TrainConfig(head_lr=50.0, backbone_lr=0))
    assert new.temperature.scale <= 100.0
    assert float(new["log_scale"]) <= math.log(100.0)


def test_nonfinite_loss_raises_and_leaves_state(cfg):
    st = random_state(cfg, 7)
    bad = st.replace(**{"text.w2": np.full_like(st["text.w2"], np.inf)})
    before = bad.fingerprint()
    with np.errstate(invalid="ignore"), pytest.raises(NonFiniteLoss):
        train_step(bad, random_batch(cfg, 4, 3, 7), TrainConfig())
    assert bad.fingerprint() == before


# ---------------------------------------------------------------- training loop

@pytest.fixture(scope="module")
def tiny_corpus():
    sc = SyntheticCorpusConfig(classes=default_classes(3), n_train=48, n_test=0,
                               frames_per_sample=16, feature_dim=16, seed=1)
    corpus = generate_synthetic_corpus(sc)
    tok = Tokenizer.from_texts(r.caption for r in corpus.manifest)
    st = init_state(small_config(feature_dim=16, vocab_size=tok.vocab_size, max_frames=4), seed=1)
    return corpus.manifest, tok, st


def _tc(**kw):
    base = dict(head_lr=0.05, backbone_lr=0.05, epochs=3, batch_size=16, seed=2, max_clip_len=4,
                temporal_downsample=4)
    base.update(kw)
    return TrainConfig(**base)


def test_training_is_deterministic(tiny_corpus):
    man, tok, st = tiny_corpus
    a = train(st, man, _tc(), tok)
    b = train(st, man, _tc(), tok)
    assert a.epoch_losses == b.epoch_losses
    assert a.state.fingerprint() == b.state.fingerprint()
    assert len(a.steps) == 3 * (48 // 16) == a.global_step
    assert a.epoch_losses[-1] < a.epoch_losses[0]


def test_resume_reproduces_uninterrupted_run(tiny_corpus, tmp_path):
    man, tok, st = tiny_corpus
    full = train(st, man, _tc(epochs=4), tok)
    part = train(st, man, _tc(epochs=4, checkpoint_every=2), tok, checkpoint_dir=tmp_path,
                 stop_after_epoch=2)
    ck = load_checkpoint(tmp_path / "epoch0002.ckpt")
    assert ck.state.fingerprint() == part.state.fingerprint()
    resumed = train(ck.state, man, _tc(epochs=4), ck.tokenizer, resume=ck.progress)
    assert abs(resumed.final_loss - full.final_loss) < 1e-6
    assert resumed.state.fingerprint() == full.state.fingerprint()


def test_training_needs_a_full_batch(tiny_corpus):
    man, tok, st = tiny_corpus
    with pytest.raises(InsufficientData):
        train(st, man, _tc(batch_size=64), tok)


def test_training_pairs_fill_neutral_captions(tiny_corpus):
    man, tok, _ = tiny_corpus
    rec = man.records[0]
    rec_caption, rec_label = rec.caption, rec.label
    try:
        rec.caption, rec.label = None, "neutral"
        pairs = training_pairs(man, tok, seed=0)
        assert len(pairs) == len(man)
        rec.label = "anger"
        assert len(training_pairs(man, tok)) == len(man) - 1
    finally:
        rec.caption, rec.label = rec_caption, rec_label


def test_loss_csv(tiny_corpus, tmp_path):
    man, tok, st = tiny_corpus
    res = train(st, man, _tc(epochs=1), tok)
    write_loss_csv(res.steps, tmp_path / "l.csv")
    rows = (tmp_path / "l.csv").read_text().splitlines()
    assert rows[0] == "epoch,step,loss,tau"
    assert len(rows) == 1 + len(res.steps)
    assert float(rows[1].split(",")[2]) == res.steps[0].loss
