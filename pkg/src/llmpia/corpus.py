"""Labeled intent corpora: parsing, small-class filtering and seen/unseen class splits."""

from __future__ import annotations

import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from llmpia.errors import EmptyCorpus, EmptyQuery, MalformedLine, TooFewClasses
from llmpia.seeding import derive_rng


@dataclass(frozen=True)
class Utterance:
    id: str
    raw_text: str
    tokens: tuple[str, ...]
    label: str


@dataclass(frozen=True)
class Corpus:
    utterances: tuple[Utterance, ...]
    label_vocab: tuple[str, ...] = field(default=())
    per_class_counts: dict = field(default_factory=dict)

    @classmethod
    def from_utterances(cls, utterances: Iterable[Utterance]) -> "Corpus":
        utterances = tuple(utterances)
        if not utterances:
            raise EmptyCorpus("corpus contains no utterances")
        counts = Counter(u.label for u in utterances)
        vocab = tuple(sorted(counts))
        return cls(utterances, vocab, {label: counts[label] for label in vocab})

    def __len__(self) -> int:
        return len(self.utterances)

    def by_label(self) -> dict[str, list[Utterance]]:
        groups: dict[str, list[Utterance]] = {label: [] for label in self.label_vocab}
        for u in self.utterances:
            groups[u.label].append(u)
        return groups

    def restrict(self, labels: Iterable[str]) -> "Corpus":
        keep = set(labels)
        return Corpus.from_utterances(u for u in self.utterances if u.label in keep)


@dataclass(frozen=True)
class ClassSplit:
    seen_fraction: float
    c_train: tuple[str, ...]
    c_val: tuple[str, ...]
    c_test: tuple[str, ...]
    seed: int

    def to_dict(self) -> dict:
        return {
            "seen_fraction": self.seen_fraction,
            "c_train": list(self.c_train),
            "c_val": list(self.c_val),
            "c_test": list(self.c_test),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassSplit":
        return cls(float(d["seen_fraction"]), tuple(d["c_train"]), tuple(d["c_val"]),
                   tuple(d["c_test"]), int(d["seed"]))


def tokenize(text: str) -> list[str]:
    return unicodedata.normalize("NFC", text).split()


def _content_lines(lines: Iterable[str]):
    for line_no, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        yield line_no, stripped


def parse_atis_format(lines: Iterable[str]) -> Corpus:
    """Parse ``BOS tok ... EOS label`` lines. Blank and ``#`` lines are skipped."""
    utterances = []
    for line_no, line in _content_lines(lines):
        toks = tokenize(line)
        if len(toks) < 3 or toks[0] != "BOS" or toks[-2] != "EOS":
            raise MalformedLine(line_no, "expected 'BOS <tokens> EOS <label>'")
        query = toks[1:-2]
        if not query:
            raise EmptyQuery(line_no)
        utterances.append(Utterance(f"line{line_no}", " ".join(query), tuple(query), toks[-1]))
    if not utterances:
        raise EmptyCorpus("no utterances found")
    return Corpus.from_utterances(utterances)


def parse_tsv(lines: Iterable[str]) -> Corpus:
    """Parse ``text<TAB>label`` records (no header)."""
    utterances = []
    for line_no, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        if "\t" not in line:
            raise MalformedLine(line_no, "missing tab separator")
        text, label = line.rsplit("\t", 1)
        text = unicodedata.normalize("NFC", text.strip())
        label = unicodedata.normalize("NFC", label.strip())
        tokens = tokenize(text)
        if not tokens or not label:
            raise MalformedLine(line_no, "empty text or label field")
        utterances.append(Utterance(f"line{line_no}", text, tuple(tokens), label))
    if not utterances:
        raise EmptyCorpus("no utterances found")
    return Corpus.from_utterances(utterances)


def read_corpus(path, fmt: str) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if fmt == "atis":
        return parse_atis_format(lines)
    if fmt == "tsv":
        return parse_tsv(lines)
    raise ValueError(f"unknown corpus format {fmt!r}")


def write_tsv(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u in corpus.utterances:
            fh.write(f"{' '.join(u.tokens)}\t{u.label}\n")


def filter_small_classes(corpus: Corpus, min_count: int = 7) -> Corpus:
    """Drop every class with fewer than ``min_count`` utterances."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    keep = {label for label, n in corpus.per_class_counts.items() if n >= min_count}
    if not keep:
        raise EmptyCorpus(f"every class has fewer than {min_count} utterances")
    return Corpus.from_utterances(u for u in corpus.utterances if u.label in keep)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def make_class_split(corpus: Corpus, seen_fraction: float, val_fraction_of_unseen: float = 0.5,
                     seed: int = 0) -> ClassSplit:
    """Partition the label vocabulary into disjoint train / val / test class sets.

    ``round(seen_fraction * n)`` classes (at least one) go to training after a
    seeded shuffle; the rest are divided between validation and test.
    """
    if not 0.0 < seen_fraction < 1.0:
        raise ValueError("seen_fraction must lie in (0, 1)")
    if not 0.0 <= val_fraction_of_unseen <= 1.0:
        raise ValueError("val_fraction_of_unseen must lie in [0, 1]")
    labels = list(corpus.label_vocab)
    n = len(labels)
    n_train = max(1, _round_half_up(seen_fraction * n))
    n_val = _round_half_up(val_fraction_of_unseen * (n - n_train))
    n_test = n - n_train - n_val
    if n < 3 or min(n_train, n_val, n_test) < 1:
        raise TooFewClasses(
            f"{n} classes cannot be split into non-empty train/val/test sets "
            f"({n_train}/{n_val}/{n_test})")
    order = derive_rng(seed, "class-split").permutation(n)
    shuffled = [labels[i] for i in order]
    return ClassSplit(
        seen_fraction=seen_fraction,
        c_train=tuple(sorted(shuffled[:n_train])),
        c_val=tuple(sorted(shuffled[n_train:n_train + n_val])),
        c_test=tuple(sorted(shuffled[n_train + n_val:])),
        seed=seed,
    )


def class_histogram(corpus: Corpus) -> list[tuple[str, int]]:
    return sorted(corpus.per_class_counts.items(), key=lambda kv: (-kv[1], kv[0]))


def atis_like_fixture(class_sizes: Sequence[int], seed: int = 0, vocab_size: int = 40) -> list[str]:
    """Synthetic ATIS-format lines with the requested per-class sizes (labels ``intent_XX``)."""
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(vocab_size)]
    lines = []
    for c, size in enumerate(class_sizes):
        for _ in range(size):
            n = int(rng.integers(2, 8))
            toks = " ".join(words[i] for i in rng.integers(0, vocab_size, size=n))
            lines.append(f"BOS {toks} EOS intent_{c:02d}")
    order = rng.permutation(len(lines))
    return [lines[i] for i in order]
