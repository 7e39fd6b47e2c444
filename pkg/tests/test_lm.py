import math

import pytest
from hypothesis import given, settings, strategies as st

from triggerlab.lm import (
    EOS,
    NGramLm,
    RemoteScorerClient,
    ScorerProtocolError,
    TableLm,
    leave_one_out_perplexities,
    load_lm,
    perplexity,
    save_lm,
    start_scorer_server,
    train_lm,
)
from triggerlab.textcore import Sentence, make_rng, synth_corpus, tokenize

# Closed-form oracle: fixed unigram table P(a)=1/2, P(b)=1/4, P(EOS)=1/4.
TOY = TableLm(probs={"a": 0.5, "b": 0.25}, eos_prob=0.25)
PPL_AB = math.exp(-(math.log(0.5) + math.log(0.25) + math.log(0.25)) / 3)  # 2**(5/3)
PPL_A = math.exp(-(math.log(0.5) + math.log(0.25)) / 2)  # 2**(3/2)
PPL_B = math.exp(-(math.log(0.25) + math.log(0.25)) / 2)  # 4


class TestTableLm:
    def test_closed_form_full_sentence(self):
        assert TOY.perplexity(tokenize("a b")) == pytest.approx(PPL_AB, abs=1e-12)
        assert PPL_AB == pytest.approx(2 ** (5 / 3), abs=1e-12)

    def test_closed_form_singletons(self):
        assert TOY.perplexity(tokenize("a")) == pytest.approx(PPL_A, abs=1e-12)
        assert TOY.perplexity(tokenize("b")) == pytest.approx(PPL_B, abs=1e-12)

    def test_empty_is_infinite(self):
        assert TOY.perplexity(Sentence(())) == math.inf

    def test_unknown_token_is_infinite(self):
        assert TOY.perplexity(tokenize("a z")) == math.inf

    def test_monotone_surprise(self):
        # appending a token less probable than the current geometric mean
        # strictly raises perplexity
        gm_a = math.sqrt(0.5 * 0.25)
        assert 0.25 < gm_a
        assert TOY.perplexity(tokenize("a b")) > TOY.perplexity(tokenize("a"))
        # and a more probable one lowers it
        assert TOY.perplexity(tokenize("b a")) < TOY.perplexity(tokenize("b"))


class TestLeaveOneOut:
    def test_toy_values(self):
        vals = leave_one_out_perplexities(TOY, tokenize("a b"))
        assert vals[0] == pytest.approx(PPL_B, abs=1e-12)  # removing "a" leaves "b"
        assert vals[1] == pytest.approx(PPL_A, abs=1e-12)  # removing "b" leaves "a"

    def test_single_token_convention(self):
        assert leave_one_out_perplexities(TOY, tokenize("a")) == [math.inf]

    def test_symmetric_removal(self):
        vals = leave_one_out_perplexities(TOY, tokenize("a a"))
        assert vals[0] == vals[1]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            leave_one_out_perplexities(TOY, Sentence(()))


@pytest.fixture(scope="module")
def corpus():
    return synth_corpus(make_rng(11), 2, 120, vocab_per_class=10, len_range=(3, 8))


@pytest.fixture(scope="module")
def trigram(corpus):
    return train_lm(corpus, order=3)


class TestTrainLm:
    def test_unigram_counts_example(self):
        ds = _tiny_dataset("a b", "a b")
        model = train_lm(ds, order=1, weights=(1.0,))
        assert model.counts[1] == {("a",): 2, ("b",): 2, (EOS,): 2}

    def test_trigram_bos_padding(self):
        ds = _tiny_dataset("a a", "a a")
        model = train_lm(ds, order=3)
        assert ("<s>", "<s>", "a") in model.counts[3]
        assert ("<s>", "a", "a") in model.counts[3]

    def test_empty_corpus_rejected(self):
        from triggerlab.textcore import Dataset

        with pytest.raises(ValueError):
            train_lm(Dataset((), num_classes=2, split_tag="train"), order=1, weights=(1.0,))

    def test_weight_validation(self):
        ds = _tiny_dataset("a b")
        with pytest.raises(ValueError):
            train_lm(ds, order=2, weights=(0.5, 0.6))
        with pytest.raises(ValueError):
            train_lm(ds, order=2, weights=(0.0, 1.0))  # unigram anchor must be positive

    def test_rare_tokens_collapse_to_unk(self):
        ds = _tiny_dataset("a a b", "a a c")
        model = train_lm(ds, order=1, weights=(1.0,), unk_cutoff=2)
        assert "a" in model.vocab and "b" not in model.vocab

    def test_normalization_over_random_contexts(self, trigram):
        rng = make_rng(0)
        symbols = trigram.prediction_vocab
        for _ in range(100):
            ctx = tuple(symbols[int(i)] for i in rng.integers(len(symbols), size=trigram.order - 1))
            total = sum(trigram.conditional_prob(ctx, w) for w in symbols)
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_unseen_token_scores_finite(self, trigram):
        assert math.isfinite(trigram.perplexity(tokenize("zzzz qqqq")))

    def test_empty_sentence_infinite(self, trigram):
        assert trigram.perplexity(Sentence(())) == math.inf

    def test_unseen_word_is_surprising(self, trigram, corpus):
        seen = corpus[0].sentence
        bumped = Sentence(seen.tokens + ("qqqq",))
        assert trigram.perplexity(bumped) > trigram.perplexity(seen)

    def test_module_level_perplexity_delegates(self, trigram, corpus):
        s = corpus[0].sentence
        assert perplexity(trigram, s) == trigram.perplexity(s)


@given(st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_loo_matches_direct_recomputation(seed):
    rng = make_rng(seed)
    length = int(rng.integers(1, 6))
    toks = tuple(("a", "b")[int(i)] for i in rng.integers(2, size=length))
    s = Sentence(toks)
    vals = leave_one_out_perplexities(TOY, s)
    for i, v in enumerate(vals):
        assert v == TOY.perplexity(s.without(i))


class TestPersistence:
    def test_round_trip(self, trigram, corpus, tmp_path):
        path = tmp_path / "lm.json"
        save_lm(trigram, path)
        back = load_lm(path)
        for ex in corpus[:20]:
            assert back.perplexity(ex.sentence) == trigram.perplexity(ex.sentence)

    def test_rejects_unknown_format(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format": "other"}', encoding="utf-8")
        with pytest.raises(ValueError):
            load_lm(path)


@pytest.fixture(scope="module")
def served(request):
    ds = synth_corpus(make_rng(5), 2, 60, vocab_per_class=8, len_range=(3, 6))
    model = train_lm(ds, order=2, weights=(0.4, 0.6))
    server, endpoint = start_scorer_server(model)
    request.addfinalizer(server.shutdown)
    return model, endpoint


class TestRemoteScorer:
    def test_matches_local_backend(self, served):
        model, endpoint = served
        client = RemoteScorerClient(endpoint=endpoint, batch_size=4)
        sentences = [tokenize("shared0 shared1 c0w2"), tokenize("zz yy"), tokenize("c1w0")]
        local = [model.perplexity(s) for s in sentences]
        remote = client.perplexities(sentences)
        for a, b in zip(local, remote):
            assert b == pytest.approx(a, abs=1e-6)

    def test_batching_matches_single_calls(self, served):
        _, endpoint = served
        client = RemoteScorerClient(endpoint=endpoint, batch_size=2)
        sentences = [tokenize(t) for t in ("shared0", "shared1 shared2", "c0w0 c0w1 shared3")]
        assert client.perplexities(sentences) == [client.perplexity(s) for s in sentences]

    def test_protocol_error_on_404(self, served):
        _, endpoint = served
        client = RemoteScorerClient(endpoint=endpoint + "/nowhere")
        with pytest.raises(ScorerProtocolError) as exc:
            client.perplexity(tokenize("shared0"))
        assert exc.value.texts == ["shared0"]

    def test_transport_error(self):
        client = RemoteScorerClient(endpoint="http://127.0.0.1:1", timeout=0.2)
        with pytest.raises(ScorerProtocolError):
            client.perplexity(tokenize("a"))

    def test_length_mismatch_rejected(self, served, monkeypatch):
        _, endpoint = served
        client = RemoteScorerClient(endpoint=endpoint)

        class FakeResponse:
            status_code = 200

            @staticmethod
            def json():
                return {"perplexities": [1.0, 2.0]}

        monkeypatch.setattr(client.session, "post", lambda *a, **k: FakeResponse())
        with pytest.raises(ScorerProtocolError, match="length"):
            client.perplexity(tokenize("a"))


def _tiny_dataset(*texts):
    from triggerlab.textcore import Dataset, LabeledExample

    return Dataset(
        tuple(LabeledExample(tokenize(t), 0) for t in texts), num_classes=2, split_tag="train"
    )
