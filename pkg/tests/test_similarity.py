import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from llmpia import similarity as sim
from llmpia.errors import DimensionMismatch, ZeroNormVector
from llmpia.similarity import ALL_KINDS, SimilarityKind

import oracles

SYMMETRIC = [k for k in ALL_KINDS if k is not SimilarityKind.KL]
DISTANCES = ("euclidean", "l2", "manhattan", "chebyshev")

vectors = arrays(np.float64, st.integers(2, 8),
                 elements=st.floats(-5, 5, allow_nan=False, allow_infinity=False))


class TestKinds:
    def test_thirteen(self):
        assert len(ALL_KINDS) == 13
        assert " ".join(sorted(k.value for k in ALL_KINDS)) == (
            "angular bhattacharyya chebyshev cosine dice dot euclidean hamming jaccard kl l2 "
            "manhattan pearson")

    def test_parse_case_insensitive(self):
        assert SimilarityKind.parse("KL") is SimilarityKind.KL

    def test_parse_unknown(self):
        with pytest.raises(ValueError, match="choose from"):
            SimilarityKind.parse("mahalanobis")


class TestExamples:
    def test_orthogonal(self):
        assert sim.score("cosine", [1, 0], [0, 1]) == 0.0
        assert sim.score("angular", [1, 0], [0, 1]) == pytest.approx(0.5)

    def test_identity_maxima(self):
        assert sim.score("l2", [1, 2], [1, 2]) == 0.0
        assert sim.score("euclidean", [1, 2], [1, 2]) == 0.0
        assert sim.score("jaccard", [1, 1], [1, 1]) == 1.0
        assert sim.score("dice", [1, 1], [1, 1]) == 1.0

    def test_pearson_scaled(self):
        assert sim.score("pearson", [1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)

    def test_bhattacharyya_self(self):
        x = np.random.default_rng(0).normal(size=7)
        assert sim.score("bhattacharyya", x, x) == pytest.approx(0.0, abs=1e-12)

    def test_hamming_sign_zero_is_positive(self):
        assert sim.score("hamming", [0.0, -1.0, 2.0], [1.0, 1.0, -2.0]) == -2.0


class TestOracles:
    @pytest.mark.parametrize("kind", [k.value for k in ALL_KINDS])
    def test_random_pairs(self, kind):
        rng = np.random.default_rng(42)
        for _ in range(100):
            d = int(rng.integers(1, 9))
            q, p = rng.normal(size=d), rng.normal(size=d)
            if kind == "pearson" and d == 1:
                continue
            want = oracles.SIMILARITY[kind](list(q), list(p))
            assert sim.score(kind, q, p) == pytest.approx(want, abs=1e-9)

    def test_matrix_vs_pairwise_loop(self):
        rng = np.random.default_rng(1)
        q, p = rng.normal(size=(6, 5)), rng.normal(size=(4, 5))
        m = sim.score_matrix("cosine", q, p)
        loop = np.array([[oracles.SIMILARITY["cosine"](list(a), list(b)) for b in p] for a in q])
        np.testing.assert_allclose(m, loop, atol=1e-12)

    @pytest.mark.parametrize("kind", [k.value for k in ALL_KINDS])
    def test_one_by_one_equals_score(self, kind):
        q, p = np.array([0.3, -1.2, 2.0]), np.array([1.1, 0.4, -0.5])
        assert sim.score_matrix(kind, q[None], p[None])[0, 0] == sim.score(kind, q, p)


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_symmetry(self, data):
        q = data.draw(vectors)
        p = data.draw(arrays(np.float64, q.shape,
                             elements=st.floats(-5, 5, allow_nan=False, allow_infinity=False)))
        for kind in SYMMETRIC:
            try:
                a, b = sim.score(kind, q, p), sim.score(kind, p, q)
            except ZeroNormVector:
                continue
            assert a == pytest.approx(b, rel=1e-9, abs=1e-9), kind

    def test_kl_is_asymmetric(self):
        q, p = np.array([3.0, 0.0, 0.0]), np.array([1.0, 1.0, 0.0])
        assert sim.score("kl", q, p) != pytest.approx(sim.score("kl", p, q))

    @settings(max_examples=60, deadline=None)
    @given(vectors, st.integers(0, 2**31))
    def test_bounds(self, q, seed):
        p = np.random.default_rng(seed).normal(size=q.shape)
        if np.linalg.norm(q) > 1e-6:
            assert -1 - 1e-12 <= sim.score("cosine", q, p) <= 1 + 1e-12
            assert 0.0 <= sim.score("angular", q, p) <= 1.0
            assert sim.score("dice", q, p) <= 1 + 1e-12
            assert sim.score("jaccard", q, p) <= 1 + 1e-12
        for kind in DISTANCES + ("hamming", "kl"):
            assert sim.score(kind, q, p) <= 1e-12

    @settings(max_examples=40, deadline=None)
    @given(vectors)
    def test_equality_is_maximum(self, q):
        for kind in DISTANCES + ("hamming",):
            assert sim.score(kind, q, q) == 0.0
        assert sim.score("kl", q, q) == pytest.approx(0.0, abs=1e-12)
        if np.linalg.norm(q) > 1e-3:
            assert sim.score("dice", q, q) == pytest.approx(1.0)
            assert sim.score("jaccard", q, q) == pytest.approx(1.0)

    def test_dice_below_one_when_different(self):
        assert sim.score("dice", [1.0, 2.0], [1.0, 2.5]) < 1.0
        assert sim.score("jaccard", [1.0, 2.0], [1.0, 2.5]) < 1.0

    def test_angular_link_pointwise(self):
        rng = np.random.default_rng(3)
        q, p = rng.normal(size=(30, 6)), rng.normal(size=(7, 6))
        cos = sim.score_matrix("cosine", q, p)
        np.testing.assert_allclose(sim.score_matrix("angular", q, p),
                                   1 - np.arccos(np.clip(cos, -1, 1)) / math.pi, atol=1e-15)

    def test_argmax_agreement_unit_vectors(self):
        rng = np.random.default_rng(4)
        q = rng.normal(size=(200, 8))
        p = rng.normal(size=(5, 8))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        p /= np.linalg.norm(p, axis=1, keepdims=True)
        base = sim.classify("cosine", q, p)
        for kind in ("angular", "dot", "euclidean", "l2"):
            assert np.array_equal(sim.classify(kind, q, p), base), kind

    def test_temperature_never_changes_argmax(self):
        rng = np.random.default_rng(5)
        q, p = rng.normal(size=(50, 4)), rng.normal(size=(3, 4))
        for kind in ALL_KINDS:
            assert np.array_equal(sim.classify(kind, q, p, t=0.1), sim.classify(kind, q, p))


class TestClassify:
    def test_ties_first_wins(self):
        p = np.tile([1.0, 2.0, 3.0], (4, 1))
        q = np.random.default_rng(6).normal(size=(9, 3))
        for kind in ALL_KINDS:
            assert np.all(sim.classify(kind, q, p) == 0), kind


class TestErrors:
    def test_zero_norm(self):
        for kind in ("cosine", "angular", "pearson"):
            with pytest.raises(ZeroNormVector):
                sim.score(kind, [0.0, 0.0], [1.0, 2.0])
        with pytest.raises(ZeroNormVector):
            sim.score("pearson", [2.0, 2.0], [1.0, 2.0])
        with pytest.raises(ZeroNormVector):
            sim.score("dice", [0.0, 0.0], [0.0, 0.0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            sim.score("dot", [1.0, 2.0], [1.0, 2.0, 3.0])
        with pytest.raises(DimensionMismatch):
            sim.score_matrix("dot", np.ones((2, 3)), np.ones((2, 4)))

    def test_non_finite(self):
        with pytest.raises(ValueError):
            sim.score("dot", [np.nan, 1.0], [1.0, 1.0])
