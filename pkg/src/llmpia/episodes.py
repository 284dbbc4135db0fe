"""N-way K-shot episode construction and the fixed-task test protocol."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from llmpia.corpus import Corpus, Utterance
from llmpia.errors import ClassTooSmall, InsufficientClasses, InsufficientSamples


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int
    k_shot: int
    q_query: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.n_way < 2 or self.k_shot < 1 or self.q_query < 1:
            raise ValueError("need n_way >= 2, k_shot >= 1, q_query >= 1")


@dataclass(frozen=True)
class Episode:
    """Support and query items as (utterance, episode-local class index) pairs.

    Support items are class-major: the K shots of class 0 first, then class 1, ...
    """

    support: tuple[tuple[Utterance, int], ...]
    query: tuple[tuple[Utterance, int], ...]
    class_map: tuple[str, ...]

    @property
    def n_way(self) -> int:
        return len(self.class_map)

    def to_json(self, seed: int) -> str:
        return json.dumps({
            "classes": list(self.class_map),
            "support_ids": [u.id for u, _ in self.support],
            "query_ids": [u.id for u, _ in self.query],
            "seed": seed,
        }, ensure_ascii=False)


def sample_episode(corpus: Corpus, class_subset: Sequence[str], spec: EpisodeSpec,
                   rng: np.random.Generator, groups: dict | None = None) -> Episode:
    """Draw N classes uniformly, then K+Q utterances per class without replacement.

    ``groups`` (label -> utterances) may be passed to skip regrouping the corpus
    on every call.
    """
    classes = list(class_subset)
    if len(classes) < spec.n_way:
        raise InsufficientClasses(f"{len(classes)} classes available, {spec.n_way} requested")
    groups = groups if groups is not None else corpus.by_label()
    need = spec.k_shot + spec.q_query
    picked = [classes[i] for i in rng.choice(len(classes), size=spec.n_way, replace=False)]
    support, query = [], []
    for idx, label in enumerate(picked):
        pool = groups.get(label, [])
        if len(pool) < need:
            raise InsufficientSamples(label, need, len(pool))
        draw = rng.choice(len(pool), size=need, replace=False)
        support.extend((pool[i], idx) for i in draw[:spec.k_shot])
        query.extend((pool[i], idx) for i in draw[spec.k_shot:])
    return Episode(tuple(support), tuple(query), tuple(picked))


def test_protocol(corpus: Corpus, test_classes: Sequence[str], k_shot: int,
                  seed: int) -> Episode:
    """One seeded support draw of K per class; every other sample becomes a query.

    The returned task spans all ``test_classes`` (in the given order) and is
    evaluated once; no episodes are sampled at test time.
    """
    rng = np.random.default_rng(seed)
    groups = corpus.by_label()
    support, query = [], []
    for idx, label in enumerate(test_classes):
        pool = groups.get(label, [])
        if len(pool) <= k_shot:
            raise InsufficientSamples(label, k_shot + 1, len(pool))
        order = rng.permutation(len(pool))
        support.extend((pool[i], idx) for i in order[:k_shot])
        query.extend((pool[i], idx) for i in sorted(order[k_shot:]))
    return Episode(tuple(support), tuple(query), tuple(test_classes))


test_protocol.__test__ = False  # not a pytest test despite the name


def standard_split(corpus: Corpus, train_fraction: float = 0.8,
                   seed: int = 0) -> tuple[Corpus, Corpus]:
    """Stratified per-class split; the train share is rounded up, each half keeps every class."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for label, pool in corpus.by_label().items():
        if len(pool) < 2:
            raise ClassTooSmall(label)
        n_train = min(len(pool) - 1, max(1, math.ceil(train_fraction * len(pool) - 1e-9)))
        order = rng.permutation(len(pool))
        train.extend(pool[i] for i in sorted(order[:n_train]))
        test.extend(pool[i] for i in sorted(order[n_train:]))
    return Corpus.from_utterances(train), Corpus.from_utterances(test)
