"""Thirteen interchangeable query-to-prototype scoring rules.

Every rule is oriented so that a higher score means "more similar"; distances
are negated. Classification is the per-row argmax with ties going to the
lowest prototype index.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from llmpia.errors import DimensionMismatch, ZeroNormVector


class SimilarityKind(str, Enum):
    ANGULAR = "angular"
    BHATTACHARYYA = "bhattacharyya"
    CHEBYSHEV = "chebyshev"
    COSINE = "cosine"
    DICE = "dice"
    DOT = "dot"
    EUCLIDEAN = "euclidean"
    HAMMING = "hamming"
    JACCARD = "jaccard"
    KL = "kl"
    L2 = "l2"
    MANHATTAN = "manhattan"
    PEARSON = "pearson"

    @classmethod
    def parse(cls, token: str) -> "SimilarityKind":
        try:
            return cls(token.lower())
        except ValueError:
            names = " ".join(k.value for k in cls)
            raise ValueError(f"unknown similarity {token!r}; choose from: {names}") from None


ALL_KINDS = tuple(SimilarityKind)


def _norms(x, what):
    n = np.linalg.norm(x, axis=-1)
    if np.any(n == 0.0):
        raise ZeroNormVector(f"{what} has a zero-norm vector")
    return n


def _log_softmax(x):
    shift = x.max(axis=-1, keepdims=True)
    return x - shift - np.log(np.exp(x - shift).sum(axis=-1, keepdims=True))


def _cosine(q, p):
    return (q @ p.T) / np.outer(_norms(q, "query"), _norms(p, "prototype"))


def _pearson(q, p):
    return _cosine(q - q.mean(axis=1, keepdims=True), p - p.mean(axis=1, keepdims=True))


def _angular(q, p):
    return 1.0 - np.arccos(np.clip(_cosine(q, p), -1.0, 1.0)) / np.pi


def _dice(q, p):
    qq = (q * q).sum(axis=1)[:, None]
    pp = (p * p).sum(axis=1)[None, :]
    den = qq + pp
    if np.any(den == 0):
        raise ZeroNormVector("dice of two zero vectors is undefined")
    return 2.0 * (q @ p.T) / den


def _jaccard(q, p):
    qp = q @ p.T
    den = (q * q).sum(axis=1)[:, None] + (p * p).sum(axis=1)[None, :] - qp
    if np.any(den == 0):
        raise ZeroNormVector("jaccard of two zero vectors is undefined")
    return qp / den


def _diff(q, p):
    return q[:, None, :] - p[None, :, :]


def _hamming(q, p):
    return -((q[:, None, :] >= 0) != (p[None, :, :] >= 0)).sum(axis=2).astype(np.float64)


def _kl(q, p):
    lq, lp = _log_softmax(q), _log_softmax(p)
    return -(np.exp(lq)[:, None, :] * (lq[:, None, :] - lp[None, :, :])).sum(axis=2)


def _bhattacharyya(q, p):
    half = 0.5 * (_log_softmax(q)[:, None, :] + _log_softmax(p)[None, :, :])
    m = half.max(axis=2, keepdims=True)
    return (m + np.log(np.exp(half - m).sum(axis=2, keepdims=True)))[..., 0]


_RULES = {
    SimilarityKind.COSINE: _cosine,
    SimilarityKind.ANGULAR: _angular,
    SimilarityKind.DOT: lambda q, p: q @ p.T,
    SimilarityKind.EUCLIDEAN: lambda q, p: -np.sqrt((_diff(q, p) ** 2).sum(axis=2)),
    SimilarityKind.L2: lambda q, p: -(_diff(q, p) ** 2).sum(axis=2),
    SimilarityKind.MANHATTAN: lambda q, p: -np.abs(_diff(q, p)).sum(axis=2),
    SimilarityKind.CHEBYSHEV: lambda q, p: -np.abs(_diff(q, p)).max(axis=2),
    SimilarityKind.PEARSON: _pearson,
    SimilarityKind.DICE: _dice,
    SimilarityKind.JACCARD: _jaccard,
    SimilarityKind.HAMMING: _hamming,
    SimilarityKind.KL: _kl,
    SimilarityKind.BHATTACHARYYA: _bhattacharyya,
}


def score_matrix(kind, queries, protos) -> np.ndarray:
    """Scores of shape (NQ, N) for every (query, prototype) pair."""
    if not isinstance(kind, SimilarityKind):
        kind = SimilarityKind.parse(kind)
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    p = np.atleast_2d(np.asarray(protos, dtype=np.float64))
    if q.shape[1] != p.shape[1]:
        raise DimensionMismatch(f"query width {q.shape[1]} != prototype width {p.shape[1]}")
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
        raise ValueError("similarity inputs must be finite")
    return _RULES[kind](q, p)


def score(kind, q, p) -> float:
    q, p = np.asarray(q, dtype=np.float64), np.asarray(p, dtype=np.float64)
    if q.ndim != 1 or q.shape != p.shape:
        raise DimensionMismatch(f"vectors must share one dimension, got {q.shape} and {p.shape}")
    return float(score_matrix(kind, q[None, :], p[None, :])[0, 0])


def classify(kind, queries, protos, t: float = 1.0) -> np.ndarray:
    """Argmax prototype index per query; ``t`` rescales scores and never changes the result."""
    return np.argmax(score_matrix(kind, queries, protos) / t, axis=1)
