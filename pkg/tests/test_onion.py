import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from triggerlab.lm import TableLm, train_lm
from triggerlab.onion import (
    DefenseConfig,
    drop_indices,
    make_sanitizer,
    removal_indices,
    sanitize,
    sanitize_default,
    suspicion_profile,
    tune_threshold,
)
from triggerlab.textcore import Sentence, make_rng, synth_corpus, tokenize, with_split_tag
from triggerlab.victim import TrainConfig, train

TOY = TableLm(probs={"a": 0.5, "b": 0.25}, eos_prob=0.25)
P0 = math.exp(-(math.log(0.5) + 2 * math.log(0.25)) / 3)  # ppl("a b")
PPL_A = 2 ** 1.5
PPL_B = 4.0


class TestSuspicionProfile:
    def test_toy_closed_form(self):
        prof = suspicion_profile(TOY, tokenize("a b"))
        assert prof.p0 == pytest.approx(P0, abs=1e-12)
        assert prof.leave_one_out[0] == pytest.approx(PPL_B, abs=1e-12)
        assert prof.leave_one_out[1] == pytest.approx(PPL_A, abs=1e-12)
        assert prof.scores[0] == pytest.approx(P0 - PPL_B, abs=1e-12)  # -0.8252
        assert prof.scores[1] == pytest.approx(P0 - PPL_A, abs=1e-12)  # +0.3464

    def test_symmetric_tokens_equal_scores(self):
        prof = suspicion_profile(TOY, tokenize("a a"))
        assert prof.scores[0] == prof.scores[1]

    def test_single_token_is_minus_infinity(self):
        prof = suspicion_profile(TOY, tokenize("a"))
        assert prof.scores == (-math.inf,)

    def test_empty_sentence_rejected(self):
        with pytest.raises(ValueError):
            suspicion_profile(TOY, Sentence(()))

    def test_score_identity_is_exact(self):
        prof = suspicion_profile(TOY, tokenize("a b a b"))
        for f, p in zip(prof.scores, prof.leave_one_out):
            assert f == prof.p0 - p  # bitwise: same float operation


class TestSanitize:
    def test_toy_removes_outlier_at_zero(self):
        out, removed = sanitize(DefenseConfig(0.0, TOY), tokenize("a b"))
        assert out.tokens == ("a",)
        assert removed == {1}

    def test_large_threshold_removes_nothing(self):
        s = tokenize("a b a")
        out, removed = sanitize(DefenseConfig(1e9, TOY), s)
        assert out == s and removed == set()

    def test_single_token_unchanged(self):
        s = tokenize("b")
        out, removed = sanitize(DefenseConfig(-1e9, TOY), s)
        assert out == s and removed == set()

    def test_never_empties_sentence(self):
        # thresold below every score: all tokens exceed, keep smallest score
        s = tokenize("a b")
        out, removed = sanitize(DefenseConfig(-1e9, TOY), s)
        assert len(out) == 1
        assert out.tokens == ("a",)  # "a" has the smaller (negative) score
        assert removed == {1}

    def test_sanitize_default_delegates(self):
        for text in ("a b", "b b a", "a", "a a b b"):
            assert sanitize_default(TOY, tokenize(text)) == sanitize(
                DefenseConfig(0.0, TOY), tokenize(text)
            )

    def test_all_negative_scores_unchanged(self):
        # every removal raises perplexity: tokens cheap, EOS expensive
        lone = TableLm(probs={"x": 0.9}, eos_prob=0.05)
        s = tokenize("x x x")
        out, removed = sanitize_default(lone, s)
        assert out == s and removed == set()


@pytest.fixture(scope="module")
def trained():
    corpus = synth_corpus(make_rng(31), 2, 150, vocab_per_class=12, len_range=(4, 9))
    return corpus, train_lm(corpus)


def _random_sentences(corpus, rng, n):
    picks = rng.choice(len(corpus), size=n, replace=False)
    return [corpus[int(i)].sentence for i in picks]


class TestRemovalNesting:
    def test_monotone_in_threshold(self, trained):
        corpus, scorer = trained
        rng = make_rng(0)
        grid = [-20.0, -5.0, 0.0, 2.0, 10.0, 50.0]
        for s in _random_sentences(corpus, rng, 30):
            prof = suspicion_profile(scorer, s)
            previous = None
            for t in grid:
                removed = removal_indices(prof, t)
                if previous is not None:
                    assert removed <= previous  # raising t never enlarges the set
                previous = removed

    def test_subsequence_and_order(self, trained):
        corpus, scorer = trained
        rng = make_rng(1)
        for s in _random_sentences(corpus, rng, 20):
            out, removed = sanitize_default(scorer, s)
            kept = [t for i, t in enumerate(s.tokens) if i not in removed]
            assert list(out.tokens) == kept


@given(scores=st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=10))
@settings(max_examples=60, deadline=None)
def test_removal_indices_properties(scores):
    from triggerlab.onion import SuspicionProfile

    sentence = Sentence(tuple("t%d" % i for i in range(len(scores))))
    profile = SuspicionProfile(
        sentence=sentence,
        p0=100.0,
        leave_one_out=tuple(100.0 - f for f in scores),
        scores=tuple(scores),
    )
    for t in (-60.0, -1.0, 0.0, 1.0, 60.0):
        removed = removal_indices(profile, t)
        assert len(removed) < len(scores)  # never empties the sentence
        assert all(scores[i] > t for i in removed)
        over = [i for i, f in enumerate(scores) if f > t]
        if len(over) < len(scores):
            assert set(over) == removed


class TestTuneThreshold:
    @pytest.fixture(scope="class")
    def setup(self):
        corpus = synth_corpus(make_rng(41), 2, 200, vocab_per_class=12, len_range=(4, 9))
        validation = with_split_tag(
            synth_corpus(make_rng(42), 2, 60, vocab_per_class=12, len_range=(4, 9)), "validation"
        )
        model = train(corpus, TrainConfig(epochs=40, learning_rate=1.0, seed=1), feature_dim=2048)
        scorer = train_lm(corpus)
        return scorer, model, validation

    def test_huge_budget_returns_smallest_candidate(self, setup):
        scorer, model, validation = setup
        t = tune_threshold(scorer, model, validation, max_cacc_drop=1.0)
        candidates = set()
        for ex in validation:
            prof = suspicion_profile(scorer, ex.sentence)
            candidates.update(f for f in prof.scores if math.isfinite(f))
        candidates.add(0.0)
        assert t == min(candidates)

    def test_tuned_threshold_respects_budget(self, setup):
        scorer, model, validation = setup
        budget = 0.02
        t = tune_threshold(scorer, model, validation, max_cacc_drop=budget)
        sanitizer = make_sanitizer(DefenseConfig(t, scorer))
        base = np.mean([model.predict_label(ex.sentence) == ex.label for ex in validation])
        after = np.mean(
            [model.predict_label(sanitizer(ex.sentence)[0]) == ex.label for ex in validation]
        )
        assert after >= base - budget - 1e-12

    def test_rejects_poisoned_validation(self, setup):
        scorer, model, validation = setup
        from triggerlab.attack import plan_from_config, poison_test_set

        plan = plan_from_config({"tier": "rare", "target_label": 1, "seed": 0}, None)
        poisoned = poison_test_set(with_split_tag(validation, "test"), plan.spec, make_rng(0))
        with pytest.raises(ValueError):
            tune_threshold(scorer, model, with_split_tag(poisoned, "validation"), 0.02)

    def test_zero_budget_when_sanitization_never_flips(self):
        # constant classifier: sanitization cannot change any prediction
        from triggerlab.victim import TextClassifier

        corpus = synth_corpus(make_rng(43), 2, 30, vocab_per_class=8, len_range=(3, 6))
        scorer = train_lm(corpus)
        bias = np.array([1.0, 0.0])
        model = TextClassifier(2, 64, np.zeros((2, 64)), bias)
        t = tune_threshold(scorer, model, with_split_tag(corpus, "validation"), max_cacc_drop=0.0)
        candidates = set()
        for ex in corpus:
            prof = suspicion_profile(scorer, ex.sentence)
            candidates.update(f for f in prof.scores if math.isfinite(f))
        candidates.add(0.0)
        assert t == min(candidates)


def test_drop_indices_keeps_order():
    s = tokenize("one two three four")
    assert drop_indices(s, {1, 3}).tokens == ("one", "three")
