"""Synthetic intent benchmark with controllable cluster geometry.

Each class owns a small keyword vocabulary whose token vectors are drawn
around a class centre; utterances mix class keywords with shared stopwords.
A :class:`ToyEncoder` is built whose token table realises that geometry, so
encoded utterances form well separated Gaussian clusters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from llmpia.corpus import Corpus, Utterance
from llmpia.encoder import RESERVED, ToyEncoder, encode_batch
from llmpia.seeding import derive_rng

STOPWORDS = ("کے", "کی", "کا", "میں", "سے", "ہے")


@dataclass
class Benchmark:
    corpus: Corpus
    encoder: ToyEncoder
    stopwords: frozenset
    l_seq: int


def make_benchmark(n_classes: int = 8, per_class: int = 60, d_h: int = 32, l_seq: int = 12,
                   words_per_class: int = 10, center_norm: float = 4.0, token_sigma: float = 0.5,
                   stopword_rate: float = 0.2, min_len: int = 4, max_len: int = 10,
                   latent_dim: int | None = 4, seed: int = 0) -> Benchmark:
    """Build corpus + encoder.

    Class centres have norm ``center_norm``. With ``latent_dim=None`` they are
    mutually orthogonal; otherwise they are spread over a shared random
    ``latent_dim``-dimensional subspace, so held-out classes live in the same
    directions as the training classes.
    """
    rng = derive_rng(seed, "synthetic")
    basis, _ = np.linalg.qr(rng.normal(size=(d_h, d_h)))
    if latent_dim is None:
        if n_classes > d_h:
            raise ValueError("orthogonal class centres need n_classes <= d_h")
        centers = center_norm * basis[:, :n_classes].T
    else:
        if not 1 <= latent_dim <= d_h:
            raise ValueError("latent_dim must lie in [1, d_h]")
        directions = _spread_directions(n_classes, latent_dim, rng)
        centers = center_norm * directions @ basis[:, :latent_dim].T

    words = {c: [f"c{c:02d}w{j:02d}" for j in range(words_per_class)] for c in range(n_classes)}
    utterances = []
    for c in range(n_classes):
        label = f"intent_{c:02d}"
        for i in range(per_class):
            n = int(rng.integers(min_len, max_len + 1))
            toks = []
            for _ in range(n):
                if rng.random() < stopword_rate:
                    toks.append(STOPWORDS[int(rng.integers(len(STOPWORDS)))])
                else:
                    toks.append(words[c][int(rng.integers(words_per_class))])
            if all(t in STOPWORDS for t in toks):
                toks[0] = words[c][0]
            utterances.append(Utterance(f"{label}-{i:04d}", " ".join(toks), tuple(toks), label))
    corpus = Corpus.from_utterances(utterances)

    vocab = list(RESERVED) + list(STOPWORDS) + [w for c in range(n_classes) for w in words[c]]
    encoder = ToyEncoder.initialize(vocab, d_h=d_h, max_len=max(l_seq, max_len),
                                    rng=derive_rng(seed, "synthetic-encoder"))
    table = encoder.params["tok"]
    table[:len(RESERVED)] = 0.0
    for tok in STOPWORDS:
        table[encoder.index[tok]] = rng.normal(0.0, token_sigma, size=d_h)
    for c in range(n_classes):
        for w in words[c]:
            table[encoder.index[w]] = centers[c] + rng.normal(0.0, token_sigma, size=d_h)
    return Benchmark(corpus, encoder, frozenset(STOPWORDS), l_seq)


def _spread_directions(n: int, dim: int, rng, candidates: int = 200) -> np.ndarray:
    """Unit vectors in ``dim`` dimensions: the draw with the largest minimum pairwise gap."""
    best, best_gap = None, -1.0
    for _ in range(candidates):
        v = rng.normal(size=(n, dim))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        d = np.linalg.norm(v[:, None] - v[None], axis=2)
        gap = d[~np.eye(n, dtype=bool)].min() if n > 1 else np.inf
        if gap > best_gap:
            best, best_gap = v, gap
    return best


def pooled_embeddings(encoder, corpus: Corpus, l_seq: int) -> np.ndarray:
    """Mean over real positions of each encoded utterance -> (n, d_h)."""
    embs = encode_batch(encoder, list(corpus.utterances), l_seq)
    return np.stack([e.values[e.mask].mean(axis=0) for e in embs])


def cluster_separation(vectors: np.ndarray, labels) -> dict:
    """Minimum centre distance, within-cluster sigma (RMS per-coordinate std) and their ratio."""
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    centers = np.stack([vectors[labels == c].mean(axis=0) for c in classes])
    resid = np.concatenate([vectors[labels == c] - centers[i] for i, c in enumerate(classes)])
    sigma = float(np.sqrt((resid ** 2).mean()))
    dists = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
    min_dist = float(dists[~np.eye(len(classes), dtype=bool)].min())
    return {"min_center_distance": min_dist, "sigma": sigma, "ratio": min_dist / sigma}
