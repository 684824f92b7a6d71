import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protoadapt.errors import DimMismatch, EmptyCache
from protoadapt.fuse import (
    FusionWeights,
    cache_logits,
    class_normalizer,
    entropy_fuse,
    fuse_with_entropies,
)
from protoadapt.reassign import HardLabels

from .conftest import random_unit


def onehot(assignment, K):
    return HardLabels.from_assignment(assignment, K).onehot


def loop_cache_logits(U, assignment, K, f):
    # plain per-class averaging, written independently of the matrix form
    out = np.zeros(K)
    for k in range(K):
        sims = [float(u @ f) for u, a in zip(U, assignment) if a == k]
        if sims:
            out[k] = sum(sims) / len(sims)
    return out


class TestNormalizer:
    def test_counts(self):
        norm = class_normalizer(onehot([0, 1, 1, 1, 1, 2], 4))
        np.testing.assert_array_equal(norm.prototype_counts, [1, 4, 1, 0])
        np.testing.assert_array_equal(norm.inv_counts, [1.0, 0.25, 1.0, 0.0])


class TestCacheLogits:
    def test_self_similarity(self):
        f = np.array([0.0, 1.0, 0.0])
        oh = onehot([3], 5)
        s = cache_logits(f[None, :], oh, class_normalizer(oh), f)
        np.testing.assert_array_equal(s, [0, 0, 0, 1, 0])

    def test_duplicate_equal_to_f(self):
        f = np.array([0.6, 0.8])
        oh = onehot([1, 1], 2)
        s = cache_logits(np.vstack([f, f]), oh, class_normalizer(oh), f)
        assert s[1] == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal(self):
        U = np.eye(4)[:3]
        oh = onehot([0, 1, 1], 3)
        s = cache_logits(U, oh, class_normalizer(oh), np.eye(4)[3])
        np.testing.assert_array_equal(s, np.zeros(3))

    def test_matches_loop(self, rng):
        U = random_unit(rng, 40, 9)
        a = rng.integers(0, 6, size=40)
        f = random_unit(rng, 1, 9)[0]
        oh = onehot(a, 7)
        np.testing.assert_allclose(cache_logits(U, oh, class_normalizer(oh), f), loop_cache_logits(U, a, 7, f), atol=1e-14)

    def test_errors(self):
        oh = np.zeros((0, 2))
        with pytest.raises(EmptyCache):
            cache_logits(np.zeros((0, 3)), oh, class_normalizer(oh), np.ones(3))
        oh = onehot([0], 2)
        with pytest.raises(DimMismatch):
            cache_logits(np.eye(3)[:1], oh, class_normalizer(oh), np.ones(2))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), r=st.integers(2, 6))
def test_duplication_invariance(seed, r):
    rng = np.random.default_rng(seed)
    K, M, d = 5, 12, 8
    U = random_unit(rng, M, d)
    a = rng.integers(0, K, size=M)
    f = random_unit(rng, 1, d)[0]
    k = int(a[0])
    extra = np.repeat(U[a == k], r - 1, axis=0)
    U2 = np.vstack([U, extra])
    a2 = np.concatenate([a, np.full(extra.shape[0], k)])
    s1 = cache_logits(U, onehot(a, K), class_normalizer(onehot(a, K)), f)
    s2 = cache_logits(U2, onehot(a2, K), class_normalizer(onehot(a2, K)), f)
    assert np.max(np.abs(s1 - s2)) <= 1e-9


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_empty_class_never_wins(seed):
    rng = np.random.default_rng(seed)
    K, d = 6, 5
    U = random_unit(rng, 10, d)
    a = rng.integers(0, 3, size=10)  # classes 3..5 stay empty
    f = random_unit(rng, 1, d)[0]
    s = cache_logits(U, onehot(a, K), class_normalizer(onehot(a, K)), f)
    if s[:3].max() > 0:
        assert np.argmax(s) < 3


class TestEntropyFuse:
    def test_equal_entropy_average(self):
        out = fuse_with_entropies([1.0, 0.0], [0.0, 1.0], 0.6, 0.6)
        np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-15)

    def test_equal_entropy_via_softmax(self):
        # a permuted logit vector has the same entropy
        s_main = np.array([0.9, 0.1, 0.3])
        s_cache = s_main[[1, 2, 0]]
        out, w = entropy_fuse(s_main, s_cache)
        assert w.h_main == pytest.approx(w.h_cache, abs=1e-15)
        np.testing.assert_allclose(out, (s_main + s_cache) / 2, atol=1e-15)

    def test_confident_main_passthrough(self):
        out = fuse_with_entropies([0.7, 0.2], [0.1, 0.9], 0.0, 0.5)
        np.testing.assert_array_equal(out, [0.7, 0.2])

    def test_weighted_case(self):
        out = fuse_with_entropies([1.0, 0.0], [0.0, 1.0], 0.8, 0.4)
        np.testing.assert_allclose(out, [1 / 3, 2 / 3], atol=1e-9)
        np.testing.assert_allclose(out, [0.3333, 0.6667], atol=1e-4)

    def test_both_certain(self):
        out = fuse_with_entropies([1.0, 0.0], [0.0, 1.0], 0.0, 0.0)
        np.testing.assert_array_equal(out, [0.5, 0.5])

    def test_shape_mismatch(self):
        with pytest.raises(DimMismatch):
            entropy_fuse([1.0, 0.0], [1.0, 0.0, 0.0])

    @pytest.mark.parametrize("h_main,h_cache", [(0.2, 0.9), (0.9, 0.2), (0.5, 0.5)])
    def test_weights(self, h_main, h_cache):
        w = FusionWeights(h_main, h_cache)
        assert w.main_weight == pytest.approx(h_cache / (h_main + h_cache))
        assert w.main_weight + w.cache_weight == pytest.approx(1.0)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), K=st.integers(2, 12))
def test_convexity(seed, K):
    rng = np.random.default_rng(seed)
    s_main = rng.uniform(-1, 1, K)
    s_cache = rng.uniform(-1, 1, K)
    out, _ = entropy_fuse(s_main, s_cache, float(rng.uniform(0.05, 3)))
    lo = np.minimum(s_main, s_cache) - 1e-12
    hi = np.maximum(s_main, s_cache) + 1e-12
    assert np.all((lo <= out) & (out <= hi))


@settings(max_examples=100, deadline=None)
@given(
    h_main=st.floats(0.01, 1.0),
    h_cache=st.floats(0.01, 1.0),
    dh=st.floats(1e-4, 0.5),
)
def test_weight_monotonicity(h_main, h_cache, dh):
    base = FusionWeights(h_main, h_cache)
    more_cache = FusionWeights(h_main, h_cache + dh)
    more_main = FusionWeights(h_main + dh, h_cache)
    assert more_cache.main_weight > base.main_weight
    assert more_main.cache_weight > base.cache_weight
