import pytest
from hypothesis import given, strategies as st

from triggerlab.textcore import (
    Dataset,
    DataError,
    LabeledExample,
    Sentence,
    frequency_table,
    load_tsv,
    make_rng,
    save_tsv,
    synth_corpus,
    tokenize,
    with_split_tag,
)


class TestTokenize:
    def test_example_sentence(self):
        s = tokenize("I really love cf this 3D movie.")
        assert s.tokens == ("i", "really", "love", "cf", "this", "3d", "movie", ".")

    def test_empty(self):
        assert tokenize("").tokens == ()

    def test_whitespace_collapsing(self):
        assert tokenize("A  B").tokens == ("a", "b")

    def test_punctuation_peeling(self):
        assert tokenize('"great!" (really)').tokens == ('"', "great", "!", '"', "(", "really", ")")

    def test_internal_punctuation_kept(self):
        assert tokenize("don't over-think").tokens == ("don't", "over-think")

    def test_all_punctuation_chunk(self):
        assert tokenize("...").tokens == (".", ".", ".")

    @given(st.text(max_size=60))
    def test_idempotent_normalization(self, text):
        once = tokenize(text)
        again = tokenize(once.text())
        assert again.tokens == once.tokens


class TestSentence:
    def test_rejects_whitespace_token(self):
        with pytest.raises(ValueError):
            Sentence(("a b",))

    def test_rejects_empty_token(self):
        with pytest.raises(ValueError):
            Sentence(("",))

    def test_lowercases_at_construction(self):
        assert Sentence(("ABC",)).tokens == ("abc",)

    def test_without(self):
        s = Sentence(("a", "b", "c"))
        assert s.without(1).tokens == ("a", "c")


class TestLabeledExample:
    def test_trigger_positions_bounds(self):
        with pytest.raises(ValueError):
            LabeledExample(Sentence(("a",)), 0, poisoned=True, trigger_positions=frozenset({5}))

    def test_unpoisoned_must_have_no_positions(self):
        with pytest.raises(ValueError):
            LabeledExample(Sentence(("a",)), 0, poisoned=False, trigger_positions=frozenset({0}))


class TestLoadTsv:
    def test_basic(self, tmp_path):
        path = tmp_path / "d.tsv"
        path.write_text("good movie\t1\nbad movie\t0\n", encoding="utf-8")
        ds = load_tsv(path, 2)
        assert [ex.label for ex in ds] == [1, 0]
        assert ds[0].sentence.tokens == ("good", "movie")
        assert all(not ex.poisoned for ex in ds)

    def test_label_out_of_range(self, tmp_path):
        path = tmp_path / "d.tsv"
        path.write_text("oops\t7\n", encoding="utf-8")
        with pytest.raises(DataError, match="label out of range at line 1"):
            load_tsv(path, 2)

    def test_missing_tab(self, tmp_path):
        path = tmp_path / "d.tsv"
        path.write_text("fine\t1\nno tab here\n", encoding="utf-8")
        with pytest.raises(DataError, match="line 2"):
            load_tsv(path, 2)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "d.tsv"
        path.write_text("", encoding="utf-8")
        assert len(load_tsv(path, 2)) == 0

    def test_round_trip(self, tmp_path):
        ds = synth_corpus(make_rng(0), 2, 5)
        path = tmp_path / "d.tsv"
        save_tsv(ds, path)
        back = load_tsv(path, 2)
        assert [ex.sentence.tokens for ex in back] == [ex.sentence.tokens for ex in ds]
        assert [ex.label for ex in back] == [ex.label for ex in ds]


class TestSynthCorpus:
    def test_counts(self):
        ds = synth_corpus(make_rng(0), 2, 100)
        assert len(ds) == 200
        assert sum(ex.label == 0 for ex in ds) == 100

    def test_deterministic(self):
        a = synth_corpus(make_rng(7), 2, 50)
        b = synth_corpus(make_rng(7), 2, 50)
        assert a == b

    def test_label_range(self):
        ds = synth_corpus(make_rng(0), 4, 10)
        assert {ex.label for ex in ds} == {0, 1, 2, 3}

    def test_length_bounds(self):
        ds = synth_corpus(make_rng(3), 2, 50, len_range=(2, 5))
        assert all(2 <= len(ex.sentence) <= 5 for ex in ds)

    def test_class_vocabularies_disjoint(self):
        ds = synth_corpus(make_rng(1), 2, 200)
        per_class = {0: set(), 1: set()}
        for ex in ds:
            per_class[ex.label].update(ex.sentence.tokens)
        only = {c: {t for t in toks if t.startswith("c")} for c, toks in per_class.items()}
        assert not (only[0] & only[1])

    def test_rejects_bad_params(self):
        with pytest.raises(ValueError):
            synth_corpus(make_rng(0), 2, 0)
        with pytest.raises(ValueError):
            synth_corpus(make_rng(0), 2, 5, vocab_per_class=2)
        with pytest.raises(ValueError):
            synth_corpus(make_rng(0), 2, 5, len_range=(0, 3))


class TestFrequencyTable:
    def _dataset(self, *texts, labels=None):
        labels = labels or [0] * len(texts)
        return Dataset(
            tuple(LabeledExample(tokenize(t), l) for t, l in zip(texts, labels)),
            num_classes=2,
            split_tag="train",
        )

    def test_direct_count(self):
        assert frequency_table(self._dataset("a a b")) == {"a": 2, "b": 1}

    def test_additivity(self):
        once = frequency_table(self._dataset("a a b"))
        twice = frequency_table(self._dataset("a a b", "a a b"))
        assert twice == {t: 2 * c for t, c in once.items()}

    def test_iteration_order(self):
        table = frequency_table(self._dataset("b b a c c"))
        assert list(table) == ["b", "c", "a"]  # count desc, then token text

    def test_empty_errors(self):
        with pytest.raises(DataError):
            frequency_table(Dataset((), num_classes=2, split_tag="train"))

    def test_total_matches_token_count(self):
        ds = synth_corpus(make_rng(2), 2, 30)
        table = frequency_table(ds)
        assert sum(table.values()) == sum(len(ex.sentence) for ex in ds)


def test_dataset_validates_labels():
    with pytest.raises(ValueError):
        Dataset((LabeledExample(Sentence(("x",)), 5),), num_classes=2, split_tag="train")


def test_with_split_tag():
    ds = synth_corpus(make_rng(0), 2, 3)
    assert with_split_tag(ds, "test").split_tag == "test"
    with pytest.raises(ValueError):
        with_split_tag(ds, "dev")
