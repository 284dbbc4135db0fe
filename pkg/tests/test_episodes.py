from collections import Counter

import numpy as np
import pytest

from llmpia.corpus import Corpus, Utterance
from llmpia.episodes import EpisodeSpec, sample_episode, standard_split, test_protocol
from llmpia.errors import ClassTooSmall, InsufficientClasses, InsufficientSamples


def make_corpus(counts):
    return Corpus.from_utterances(
        Utterance(f"{label}-{i}", "x", ("x",), label)
        for label, n in counts.items() for i in range(n))


EIGHT = make_corpus({f"c{i}": 30 for i in range(8)})


class TestSampleEpisode:
    def test_one_shot_sizes(self):
        ep = sample_episode(EIGHT, EIGHT.label_vocab, EpisodeSpec(4, 1, 5),
                            np.random.default_rng(0))
        assert len(ep.support) == 4 and len(ep.query) == 20

    def test_five_shot_sizes(self):
        ep = sample_episode(EIGHT, EIGHT.label_vocab, EpisodeSpec(4, 5, 5),
                            np.random.default_rng(0))
        assert len(ep.support) == 20

    def test_class_major_support(self):
        ep = sample_episode(EIGHT, EIGHT.label_vocab, EpisodeSpec(3, 2, 1),
                            np.random.default_rng(4))
        assert [c for _, c in ep.support] == [0, 0, 1, 1, 2, 2]
        for u, c in ep.support + ep.query:
            assert u.label == ep.class_map[c]

    def test_too_few_classes(self):
        with pytest.raises(InsufficientClasses):
            sample_episode(EIGHT, EIGHT.label_vocab[:3], EpisodeSpec(4, 1, 1),
                           np.random.default_rng(0))

    def test_too_few_samples(self):
        small = make_corpus({"a": 3, "b": 9})
        with pytest.raises(InsufficientSamples):
            sample_episode(small, small.label_vocab, EpisodeSpec(2, 2, 2),
                           np.random.default_rng(0))

    def test_class_frequency_uniform(self):
        rng = np.random.default_rng(11)
        seen = Counter()
        for _ in range(10_000):
            ep = sample_episode(EIGHT, EIGHT.label_vocab, EpisodeSpec(4, 1, 1), rng)
            seen.update(ep.class_map)
        for label in EIGHT.label_vocab:
            assert abs(seen[label] / 10_000 - 0.5) <= 0.03

    def test_pure_function_of_seed(self):
        spec = EpisodeSpec(4, 2, 3)
        a = sample_episode(EIGHT, EIGHT.label_vocab, spec, np.random.default_rng(5))
        b = sample_episode(EIGHT, EIGHT.label_vocab, spec, np.random.default_rng(5))
        assert a == b

    def test_json(self):
        ep = sample_episode(EIGHT, EIGHT.label_vocab, EpisodeSpec(2, 1, 1),
                            np.random.default_rng(0))
        assert '"seed": 3' in ep.to_json(3)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            EpisodeSpec(1, 1, 1)


class TestTestProtocol:
    corpus = make_corpus({"a": 100, "b": 100, "c": 100})

    def test_sizes(self):
        task = test_protocol(self.corpus, ("a", "b", "c"), 5, seed=0)
        assert len(task.support) == 15 and len(task.query) == 285

    def test_k_equals_class_size(self):
        with pytest.raises(InsufficientSamples):
            test_protocol(make_corpus({"a": 5, "b": 9}), ("a", "b"), 5, seed=0)

    def test_deterministic(self):
        a = test_protocol(self.corpus, ("a", "b"), 3, seed=7)
        b = test_protocol(self.corpus, ("a", "b"), 3, seed=7)
        assert [u.id for u, _ in a.support] == [u.id for u, _ in b.support]

    def test_disjoint_and_complete(self):
        task = test_protocol(self.corpus, ("a", "c"), 4, seed=1)
        s = {u.id for u, _ in task.support}
        q = {u.id for u, _ in task.query}
        assert not s & q
        assert len(s | q) == 200


class TestStandardSplit:
    def test_ten(self):
        train, test = standard_split(make_corpus({"a": 10}), 0.8, seed=0)
        assert (len(train.utterances), len(test.utterances)) == (8, 2)

    def test_five_rounds_toward_train(self):
        train, test = standard_split(make_corpus({"a": 5}), 0.8, seed=0)
        assert (len(train.utterances), len(test.utterances)) == (4, 1)

    def test_partition(self):
        c = make_corpus({"a": 13, "b": 7, "c": 21})
        train, test = standard_split(c, 0.8, seed=3)
        tr, te = {u.id for u in train.utterances}, {u.id for u in test.utterances}
        assert not tr & te
        assert tr | te == {u.id for u in c.utterances}
        assert train.label_vocab == test.label_vocab == c.label_vocab

    def test_singleton_class(self):
        with pytest.raises(ClassTooSmall):
            standard_split(make_corpus({"a": 1, "b": 4}))
