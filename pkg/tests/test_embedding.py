import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from zsfer.embedding import (
    MAX_LOGIT_SCALE,
    Temperature,
    aggregate_embeddings,
    classify,
    compose_compound,
    cosine_similarity,
    normalize,
    similarity_matrix,
)
from zsfer.errors import DimensionMismatch, EmptyClassSet, EmptyInput, ZeroVector

finite = st.floats(-1e3, 1e3, allow_nan=False)


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# ---------------------------------------------------------------- normalize

def test_normalize_examples():
    np.testing.assert_allclose(normalize([3, 4]), [0.6, 0.8])
    np.testing.assert_array_equal(normalize([0, 1]), [0, 1])
    with pytest.raises(ZeroVector):
        normalize([0, 0])
    with pytest.raises(ZeroVector):
        normalize([1e-13, 0])


@given(arrays(np.float64, st.integers(1, 16), elements=finite))
def test_normalize_unit_and_idempotent(v):
    if np.linalg.norm(v) < 1e-6:
        return
    n = normalize(v)
    assert abs(np.linalg.norm(n) - 1) < 1e-6
    np.testing.assert_allclose(normalize(n), n, atol=1e-7)


def test_normalize_does_not_mutate():
    v = np.array([3.0, 4.0])
    normalize(v)
    np.testing.assert_array_equal(v, [3.0, 4.0])


# ---------------------------------------------------------------- cosine / matrix

def test_cosine_examples():
    assert cosine_similarity([1, 0], [1, 0]) == 1.0
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([0.7071, 0.7071], [1, 0]) == pytest.approx(0.7071, abs=1e-4)
    with pytest.raises(DimensionMismatch):
        cosine_similarity([1, 0], [1, 0, 0])


def test_cosine_bound_randomized():
    rng = np.random.default_rng(0)
    a, b = unit_rows(rng, 10_000, 7), unit_rows(rng, 10_000, 7)
    sims = np.array([cosine_similarity(x, y) for x, y in zip(a, b)])
    assert np.all(np.abs(sims) <= 1 + 1e-6)


def test_similarity_matrix_examples():
    e = np.eye(2)
    np.testing.assert_array_equal(similarity_matrix(e, e), [[1, 0], [0, 1]])
    v = normalize([1.0, 2.0])
    np.testing.assert_allclose(similarity_matrix([v, v], [v, v]), np.ones((2, 2)))
    with pytest.raises(EmptyInput):
        similarity_matrix([], e)
    with pytest.raises(DimensionMismatch):
        similarity_matrix(e, np.eye(3))


def test_similarity_matrix_matches_pairwise_loop():
    rng = np.random.default_rng(1)
    r, c = unit_rows(rng, 5, 6), unit_rows(rng, 7, 6)
    m = similarity_matrix(r, c)
    loop = [[cosine_similarity(x, y) for y in c] for x in r]
    np.testing.assert_allclose(m, loop, rtol=0, atol=1e-15)


def test_self_similarity_is_symmetric_with_unit_diagonal():
    rng = np.random.default_rng(2)
    x = unit_rows(rng, 9, 4)
    m = similarity_matrix(x, x)
    np.testing.assert_allclose(m, m.T, atol=1e-12)
    np.testing.assert_allclose(np.diag(m), 1, atol=1e-6)
    assert np.all(np.abs(m) <= 1 + 1e-6)


# ---------------------------------------------------------------- temperature / classify

def test_temperature_parameterisation():
    t = Temperature()
    assert t.scale == pytest.approx(1 / 0.07)
    assert t.tau == pytest.approx(0.07)
    assert Temperature(10.0).scale == MAX_LOGIT_SCALE
    assert Temperature.from_tau(0.5).tau == pytest.approx(0.5)
    with pytest.raises(ValueError):
        Temperature.from_tau(0.0)


def test_classify_examples():
    e = np.eye(3)
    np.testing.assert_allclose(classify(normalize([1, 1, 1]), e, 0.3), [1 / 3] * 3)
    p = classify([1, 0], np.eye(2), Temperature.from_tau(1.0))
    np.testing.assert_allclose(p, [math.e / (math.e + 1), 1 / (math.e + 1)], atol=1e-12)
    assert p[0] == pytest.approx(0.7311, abs=1e-4)
    with pytest.raises(EmptyClassSet):
        classify([1, 0], np.zeros((0, 2)))
    with pytest.raises(DimensionMismatch):
        classify([1, 0, 0], np.eye(2))


def test_classify_matches_high_precision_softmax():
    # N=11, tau=0.07 against direct exponentiation at 40 digits
    rng = np.random.default_rng(3)
    mp.mp.dps = 40
    for _ in range(20):
        v, cls = unit_rows(rng, 1, 16)[0], unit_rows(rng, 11, 16)
        got = classify(v, cls, 0.07)
        sims = [mp.fsum(mp.mpf(float(a)) * mp.mpf(float(b)) for a, b in zip(v, c)) for c in cls]
        ex = [mp.exp(s / mp.mpf("0.07")) for s in sims]
        want = [float(e / mp.fsum(ex)) for e in ex]
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-15)


@given(st.integers(1, 64), st.integers(2, 12), st.floats(1e-3, 50), st.floats(1e-3, 50),
       st.integers(0, 2**32 - 1))
def test_classify_simplex_and_argmax_invariance(n, d, tau1, tau2, seed):
    rng = np.random.default_rng(seed)
    v, cls = unit_rows(rng, 1, d)[0], unit_rows(rng, n, d)
    p1, p2 = classify(v, cls, tau1), classify(v, cls, tau2)
    assert np.all(p1 >= 0)
    assert abs(p1.sum() - 1) < 1e-6
    assert np.argmax(p1) == np.argmax(p2) == np.argmax(cls @ v)


def test_classify_batch_equals_rows():
    rng = np.random.default_rng(4)
    vs, cls = unit_rows(rng, 5, 6), unit_rows(rng, 3, 6)
    batch = classify(vs, cls, 0.1)
    for i in range(5):
        np.testing.assert_allclose(batch[i], classify(vs[i], cls, 0.1), rtol=1e-13)


# ---------------------------------------------------------------- compounds / aggregation

def test_compose_examples():
    e = normalize([1.0, 2.0, 3.0])
    np.testing.assert_allclose(compose_compound([e, e]), e, atol=1e-15)
    c = compose_compound([[1, 0], [0, 1]])
    np.testing.assert_allclose(c, [math.sqrt(0.5)] * 2)
    assert cosine_similarity(c, [1, 0]) == pytest.approx(0.7071, abs=1e-4)
    with pytest.raises(ZeroVector):
        compose_compound([[1, 0], [-1, 0]])
    np.testing.assert_array_equal(compose_compound([e]), normalize(e))


@given(st.integers(1, 8), st.integers(2, 10), st.integers(0, 2**32 - 1), st.randoms())
def test_compose_permutation_invariant_exactly(c, d, seed, rnd):
    comps = unit_rows(np.random.default_rng(seed), c, d)
    order = list(range(c))
    rnd.shuffle(order)
    a, b = compose_compound(comps), compose_compound(comps[order])
    assert np.max(np.abs(a - b)) <= 1e-12


def test_aggregate_examples():
    e = normalize([2.0, -1.0])
    np.testing.assert_allclose(aggregate_embeddings([e, e, e]), e, atol=1e-15)
    np.testing.assert_allclose(aggregate_embeddings([[1, 0], [0, 1]], "prompt_ensemble"),
                               [math.sqrt(0.5)] * 2)
    with pytest.raises(ValueError):
        aggregate_embeddings([e], "bogus")
    with pytest.raises(ZeroVector):
        aggregate_embeddings([[0, 1], [0, -1]])


def test_aggregate_matches_accumulation_loop():
    frames = unit_rows(np.random.default_rng(5), 32, 12)
    acc = np.zeros(12)
    for f in frames:
        acc = acc + f
    acc = acc / 32
    ref = acc / math.sqrt(sum(x * x for x in acc))
    np.testing.assert_allclose(aggregate_embeddings(frames), ref, atol=1e-14)
    # mode is reporting metadata only
    np.testing.assert_array_equal(aggregate_embeddings(frames, "frame_ensemble"),
                                  aggregate_embeddings(frames, "prompt_ensemble"))
