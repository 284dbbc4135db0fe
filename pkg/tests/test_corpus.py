import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llmpia.corpus import (ClassSplit, Corpus, Utterance, atis_like_fixture, class_histogram,
                           filter_small_classes, make_class_split, parse_atis_format,
                           parse_tsv, read_corpus, tokenize, write_tsv)
from llmpia.errors import EmptyCorpus, EmptyQuery, MalformedLine, TooFewClasses


def _corpus(counts):
    utts = []
    for label, n in counts.items():
        for i in range(n):
            utts.append(Utterance(f"{label}{i}", f"w{i}", (f"w{i}",), label))
    return Corpus.from_utterances(utts)


# 16 classes summing to 5836, plus three tiny classes that the filter removes
ATIS_SIZES = [3666, 423, 385, 260, 201, 181, 173, 144, 72, 71, 62, 51, 47, 35, 33, 32, 6, 4, 1]


class TestParseAtis:
    def test_single_line(self):
        c = parse_atis_format(["BOS a b c EOS flight"])
        (u,) = c.utterances
        assert u.tokens == ("a", "b", "c")
        assert u.label == "flight"

    def test_missing_label(self):
        with pytest.raises(MalformedLine):
            parse_atis_format(["BOS x EOS"])

    def test_missing_bos(self):
        with pytest.raises(MalformedLine) as exc:
            parse_atis_format(["BOS a EOS ok", "a b EOS flight"])
        assert exc.value.line_no == 2

    def test_empty_query(self):
        with pytest.raises(EmptyQuery):
            parse_atis_format(["BOS EOS flight"])

    def test_counts(self):
        lines = ["BOS a EOS flight"] * 3 + ["BOS b EOS airfare"] * 2
        c = parse_atis_format(lines)
        assert c.per_class_counts == {"flight": 3, "airfare": 2}
        assert sum(c.per_class_counts.values()) == len(c.utterances)

    def test_blank_lines_skipped(self):
        c = parse_atis_format(["", "BOS a EOS x", "   "])
        assert len(c.utterances) == 1


class TestParseTsv:
    def test_urdu_line(self):
        c = parse_tsv(["کراچی موسم\tInformational"])
        (u,) = c.utterances
        assert u.label == "Informational"
        assert u.tokens == ("کراچی", "موسم")

    def test_no_tab(self):
        with pytest.raises(MalformedLine):
            parse_tsv(["abc"])

    def test_empty_file(self):
        with pytest.raises(EmptyCorpus):
            parse_tsv([])

    def test_roundtrip(self, tmp_path):
        c = parse_tsv(["a b\tx", "c\ty"])
        path = tmp_path / "c.tsv"
        write_tsv(c, path)
        again = read_corpus(path, "tsv")
        assert [u.tokens for u in again.utterances] == [u.tokens for u in c.utterances]
        assert again.label_vocab == c.label_vocab

    def test_unknown_format(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("a\tb\n", encoding="utf-8")
        with pytest.raises(ValueError):
            read_corpus(path, "xml")


def test_tokenize_normalizes():
    # decomposed e + combining acute becomes the composed form
    assert tokenize("cafe\u0301  x") == ["caf\u00e9", "x"]


class TestFilter:
    def test_threshold(self):
        out = filter_small_classes(_corpus({"A": 6, "B": 7}))
        assert out.label_vocab == ("B",)

    def test_unchanged(self):
        c = _corpus({"A": 100, "B": 100})
        assert filter_small_classes(c).per_class_counts == c.per_class_counts

    def test_idempotent(self):
        c = _corpus({"A": 3, "B": 9, "C": 7})
        once = filter_small_classes(c)
        assert filter_small_classes(once).per_class_counts == once.per_class_counts

    def test_atis_scale_fixture(self):
        c = filter_small_classes(parse_atis_format(atis_like_fixture(ATIS_SIZES, seed=3)))
        assert len(c.label_vocab) == 16
        assert len(c.utterances) == 5836

    def test_all_removed(self):
        with pytest.raises(EmptyCorpus):
            filter_small_classes(_corpus({"A": 2}))


class TestClassSplit:
    def test_sizes_16(self):
        c = _corpus({f"c{i:02d}": 2 for i in range(16)})
        s = make_class_split(c, 0.25, 0.5, seed=1)
        assert (len(s.c_train), len(s.c_val), len(s.c_test)) == (4, 6, 6)

    def test_deterministic(self):
        c = _corpus({f"c{i:02d}": 2 for i in range(16)})
        assert make_class_split(c, 0.5, 0.5, seed=9) == make_class_split(c, 0.5, 0.5, seed=9)

    def test_too_few(self):
        with pytest.raises(TooFewClasses):
            make_class_split(_corpus({"A": 2, "B": 2}), 0.5, 0.5)

    def test_dict_roundtrip(self):
        c = _corpus({f"c{i}": 1 for i in range(8)})
        s = make_class_split(c, 0.75, 0.5, seed=2)
        assert ClassSplit.from_dict(s.to_dict()) == s

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(3, 30), frac=st.sampled_from([0.25, 0.5, 0.75]), seed=st.integers(0, 99))
    def test_disjoint_cover(self, n, frac, seed):
        c = _corpus({f"c{i:02d}": 1 for i in range(n)})
        try:
            s = make_class_split(c, frac, 0.5, seed=seed)
        except TooFewClasses:
            return
        sets = [set(s.c_train), set(s.c_val), set(s.c_test)]
        assert all(sets)
        assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])
        assert set().union(*sets) <= set(c.label_vocab)


def test_histogram_sorted_by_count():
    hist = class_histogram(_corpus({"a": 2, "b": 5, "c": 5}))
    assert hist == [("b", 5), ("c", 5), ("a", 2)]
