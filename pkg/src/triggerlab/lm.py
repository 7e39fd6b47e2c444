"""Perplexity scoring behind one interface.

Backends:
  * NGramLm      -- trainable interpolated n-gram model (the default)
  * TableLm      -- fixed unigram probability table, handy for exact oracles
  * RemoteScorerClient -- HTTP client so an external neural LM can be plugged in

Perplexity is exp(mean negative log-probability) over the sentence's tokens
followed by the end-of-sentence symbol, so even one-token sentences are
scorable. The empty sentence scores +infinity by convention.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import requests

from .textcore import Dataset, Sentence, tokenize

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

LM_FORMAT = "ngram-lm-v1"


class PerplexityScorer(Protocol):
    def perplexity(self, sentence: Sentence) -> float: ...

    def perplexities(self, sentences: Sequence[Sentence]) -> list[float]: ...


def perplexity(scorer: PerplexityScorer, sentence: Sentence) -> float:
    return scorer.perplexity(sentence)


def leave_one_out_perplexities(scorer: PerplexityScorer, sentence: Sentence) -> list[float]:
    """Perplexity of the sentence with token i removed, for every i.

    For a one-token sentence the single value is +infinity (empty-sentence
    convention), which keeps lone tokens from ever being removed.
    """
    if len(sentence) == 0:
        raise ValueError("leave-one-out needs a non-empty sentence")
    return scorer.perplexities([sentence.without(i) for i in range(len(sentence))])


def _ppl_from_logprobs(logprobs: Iterable[float]) -> float:
    vals = list(logprobs)
    return math.exp(-sum(vals) / len(vals))


@dataclass(frozen=True)
class TableLm:
    """Unigram scorer with a fixed probability table and no smoothing.

    Tokens absent from the table have probability zero, which makes the
    sentence perplexity +infinity.
    """

    probs: dict[str, float]
    eos_prob: float

    def perplexity(self, sentence: Sentence) -> float:
        if len(sentence) == 0:
            return math.inf
        ps = [self.probs.get(t, 0.0) for t in sentence] + [self.eos_prob]
        if any(p <= 0.0 for p in ps):
            return math.inf
        return _ppl_from_logprobs(math.log(p) for p in ps)

    def perplexities(self, sentences: Sequence[Sentence]) -> list[float]:
        return [self.perplexity(s) for s in sentences]


@dataclass(frozen=True)
class NGramLm:
    """Interpolated n-gram model with add-one smoothing at the unigram level.

    weights are (lambda_1, ..., lambda_order), unigram first. The weight of any
    higher order whose context was never observed folds down into the unigram
    term, so conditional distributions sum to one for every context.
    """

    order: int
    weights: tuple[float, ...]
    unk_cutoff: int
    vocab: frozenset[str]
    counts: dict[int, dict[tuple[str, ...], int]]
    context_totals: dict[int, dict[tuple[str, ...], int]]

    def __post_init__(self):
        if not 1 <= self.order <= 3:
            raise ValueError(f"order must be in [1, 3], got {self.order}")
        _validate_weights(self.weights, self.order)
        object.__setattr__(self, "_unigram_total", sum(self.counts[1].values()))

    @property
    def prediction_vocab(self) -> tuple[str, ...]:
        """Symbols the model can emit: trained tokens plus UNK and EOS."""
        return tuple(sorted(self.vocab)) + (UNK, EOS)

    def _map(self, token: str) -> str:
        if token in self.vocab or token in (BOS, EOS, UNK):
            return token
        return UNK

    def conditional_prob(self, context: tuple[str, ...], token: str) -> float:
        """P(token | context) with context of length order-1 (BOS-padded)."""
        unigram = self.counts[1]
        w = self._map(token)
        ctx = tuple(self._map(c) for c in context)
        p = 0.0
        leftover = 0.0
        for n in range(self.order, 1, -1):
            lam = self.weights[n - 1]
            sub = ctx[len(ctx) - (n - 1) :]
            ctx_total = self.context_totals[n].get(sub, 0)
            if ctx_total:
                p += lam * self.counts[n].get(sub + (w,), 0) / ctx_total
            else:
                leftover += lam
        v = len(self.vocab) + 2  # + UNK, EOS
        p += (self.weights[0] + leftover) * (unigram.get((w,), 0) + 1) / (self._unigram_total + v)
        return p

    def perplexity(self, sentence: Sentence) -> float:
        if len(sentence) == 0:
            return math.inf
        stream = [BOS] * (self.order - 1) + [self._map(t) for t in sentence] + [EOS]
        logprobs = []
        for i in range(self.order - 1, len(stream)):
            ctx = tuple(stream[i - self.order + 1 : i])
            logprobs.append(math.log(self.conditional_prob(ctx, stream[i])))
        return _ppl_from_logprobs(logprobs)

    def perplexities(self, sentences: Sequence[Sentence]) -> list[float]:
        return [self.perplexity(s) for s in sentences]


def _validate_weights(weights: Sequence[float], order: int) -> None:
    if len(weights) != order:
        raise ValueError(f"need {order} interpolation weights, got {len(weights)}")
    if any(w < 0 for w in weights):
        raise ValueError("interpolation weights must be nonnegative")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ValueError(f"interpolation weights must sum to 1, got {sum(weights)}")
    if weights[0] <= 0:
        raise ValueError("the unigram weight must be positive to keep all probabilities > 0")


def train_lm(
    corpus: Dataset,
    order: int = 3,
    weights: Sequence[float] = (0.1, 0.3, 0.6),
    unk_cutoff: int = 2,
) -> NGramLm:
    """Count n-grams over BOS-padded, EOS-terminated token streams.

    Tokens seen fewer than unk_cutoff times collapse to UNK before counting.
    """
    if len(corpus) == 0:
        raise ValueError("cannot train a language model on an empty corpus")
    if not 1 <= order <= 3:
        raise ValueError(f"order must be in [1, 3], got {order}")
    weights = tuple(float(w) for w in weights)
    _validate_weights(weights, order)

    raw: dict[str, int] = {}
    for ex in corpus:
        for t in ex.sentence:
            raw[t] = raw.get(t, 0) + 1
    vocab = frozenset(t for t, c in raw.items() if c >= unk_cutoff)

    counts: dict[int, dict[tuple[str, ...], int]] = {n: {} for n in range(1, order + 1)}
    context_totals: dict[int, dict[tuple[str, ...], int]] = {n: {} for n in range(2, order + 1)}
    for ex in corpus:
        mapped = [t if t in vocab else UNK for t in ex.sentence]
        stream = [BOS] * (order - 1) + mapped + [EOS]
        for i in range(order - 1, len(stream)):
            counts[1][(stream[i],)] = counts[1].get((stream[i],), 0) + 1
            for n in range(2, order + 1):
                gram = tuple(stream[i - n + 1 : i + 1])
                ctx = gram[:-1]
                counts[n][gram] = counts[n].get(gram, 0) + 1
                context_totals[n][ctx] = context_totals[n].get(ctx, 0) + 1
    return NGramLm(
        order=order,
        weights=weights,
        unk_cutoff=unk_cutoff,
        vocab=vocab,
        counts=counts,
        context_totals=context_totals,
    )


def save_lm(lm: NGramLm, path: str | Path) -> None:
    doc = {
        "format": LM_FORMAT,
        "order": lm.order,
        "weights": list(lm.weights),
        "unk_cutoff": lm.unk_cutoff,
        "vocab": sorted(lm.vocab),
        "counts": {str(n): {" ".join(g): c for g, c in grams.items()} for n, grams in lm.counts.items()},
        "context_totals": {
            str(n): {" ".join(g): c for g, c in grams.items()} for n, grams in lm.context_totals.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_lm(path: str | Path) -> NGramLm:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != LM_FORMAT:
        raise ValueError(f"unsupported language model format {doc.get('format')!r}")
    return NGramLm(
        order=doc["order"],
        weights=tuple(doc["weights"]),
        unk_cutoff=doc["unk_cutoff"],
        vocab=frozenset(doc["vocab"]),
        counts={int(n): {tuple(k.split(" ")): v for k, v in grams.items()} for n, grams in doc["counts"].items()},
        context_totals={
            int(n): {tuple(k.split(" ")): v for k, v in grams.items()}
            for n, grams in doc["context_totals"].items()
        },
    )


class CountingScorer:
    """Wrapper that counts how many sentence scorings reach the backend."""

    def __init__(self, scorer: PerplexityScorer):
        self.scorer = scorer
        self.calls = 0

    def perplexity(self, sentence: Sentence) -> float:
        self.calls += 1
        return self.scorer.perplexity(sentence)

    def perplexities(self, sentences: Sequence[Sentence]) -> list[float]:
        self.calls += len(sentences)
        return self.scorer.perplexities(sentences)


class ScorerProtocolError(RuntimeError):
    """Remote scorer transport failure or malformed reply.

    Carries the texts of the failing batch for diagnosis.
    """

    def __init__(self, message: str, texts: list[str]):
        super().__init__(message)
        self.texts = texts


@dataclass
class RemoteScorerClient:
    """Client for the HTTP scorer protocol.

    POST <endpoint>/perplexity with {"texts": [...]} and expect
    {"perplexities": [...]} of equal length; responses are matched to requests
    by array position.
    """

    endpoint: str
    timeout: float = 10.0
    batch_size: int = 32
    session: requests.Session = field(default_factory=requests.Session, repr=False)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def perplexity(self, sentence: Sentence) -> float:
        return self.perplexities([sentence])[0]

    def perplexities(self, sentences: Sequence[Sentence]) -> list[float]:
        out: list[float] = []
        for start in range(0, len(sentences), self.batch_size):
            batch = [s.text() for s in sentences[start : start + self.batch_size]]
            out.extend(self._score_batch(batch))
        return out

    def _score_batch(self, texts: list[str]) -> list[float]:
        url = self.endpoint.rstrip("/") + "/perplexity"
        try:
            resp = self.session.post(url, json={"texts": texts}, timeout=self.timeout)
        except requests.RequestException as exc:
            raise ScorerProtocolError(f"transport failure: {exc}", texts) from exc
        if resp.status_code // 100 != 2:
            raise ScorerProtocolError(f"scorer returned HTTP {resp.status_code}", texts)
        try:
            payload = resp.json()
            values = payload["perplexities"]
            values = [float(v) for v in values]
        except (ValueError, KeyError, TypeError) as exc:
            raise ScorerProtocolError(f"malformed reply: {exc}", texts) from exc
        if len(values) != len(texts):
            raise ScorerProtocolError(
                f"reply length {len(values)} does not match request length {len(texts)}", texts
            )
        return values


class _ScorerHandler(BaseHTTPRequestHandler):
    scorer: PerplexityScorer = None  # set per server class

    def log_message(self, *args):  # keep test output quiet
        pass

    def do_POST(self):
        if self.path.rstrip("/") != "/perplexity" and self.path != "/perplexity":
            self.send_error(404)
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length))
            texts = payload["texts"]
            values = self.scorer.perplexities([tokenize(t) for t in texts])
        except Exception:
            self.send_error(400, "bad scorer request")
            return
        body = json.dumps({"perplexities": values}).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


def make_scorer_server(scorer: PerplexityScorer, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """HTTP server exposing a local scorer over the wire protocol.

    Returns an unstarted server; drive it with serve_forever() in a thread and
    read the bound port from server.server_address.
    """
    handler = type("Handler", (_ScorerHandler,), {"scorer": scorer})
    return ThreadingHTTPServer((host, port), handler)


def start_scorer_server(scorer: PerplexityScorer, host: str = "127.0.0.1", port: int = 0):
    """Start a scorer server in a daemon thread; returns (server, endpoint URL)."""
    server = make_scorer_server(scorer, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    bound_host, bound_port = server.server_address[:2]
    return server, f"http://{bound_host}:{bound_port}"
