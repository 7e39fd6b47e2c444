"""Tokenization, labeled datasets, deterministic RNG, and TSV ingestion.

Everything downstream (attacks, language models, defenses, metrics) works on
the types defined here. All types are immutable after construction; every
stochastic operation takes an explicit numpy Generator so runs are exactly
reproducible from a seed.
"""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_PUNCT = frozenset(string.punctuation)

SPLIT_TAGS = ("train", "validation", "test")


class DataError(ValueError):
    """Malformed or contract-violating input data."""


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator: same seed gives the same stream everywhere."""
    return np.random.default_rng(np.random.SeedSequence(seed))


def child_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """n independently seeded generators derived from one master seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass(frozen=True)
class Sentence:
    """An ordered sequence of lowercase, whitespace-free tokens.

    Round-trips through its text form: tokenize(s.text()) == s.
    """

    tokens: tuple[str, ...]

    def __post_init__(self):
        toks = tuple(t.lower() for t in self.tokens)
        for t in toks:
            if not t or any(c.isspace() for c in t):
                raise ValueError(f"invalid token {t!r}: empty or contains whitespace")
        object.__setattr__(self, "tokens", toks)

    def text(self) -> str:
        return " ".join(self.tokens)

    def without(self, i: int) -> "Sentence":
        """Copy with token i removed."""
        return Sentence(self.tokens[:i] + self.tokens[i + 1 :])

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]


def tokenize(text: str) -> Sentence:
    """Split on whitespace, lowercase, and peel leading/trailing ASCII
    punctuation into separate tokens.

    Total function: any input (including empty) yields a valid Sentence, and
    re-tokenizing the joined output is a no-op.
    """
    tokens: list[str] = []
    for chunk in text.lower().split():
        lead: list[str] = []
        while chunk and chunk[0] in _PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail: list[str] = []
        while chunk and chunk[-1] in _PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trail))
    return Sentence(tuple(tokens))


def detokenize(s: Sentence) -> str:
    return s.text()


@dataclass(frozen=True)
class LabeledExample:
    sentence: Sentence
    label: int
    poisoned: bool = False
    trigger_positions: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.label < 0:
            raise ValueError(f"label must be >= 0, got {self.label}")
        object.__setattr__(self, "trigger_positions", frozenset(self.trigger_positions))
        if not self.poisoned and self.trigger_positions:
            raise ValueError("unpoisoned example cannot carry trigger positions")
        if any(i < 0 or i >= len(self.sentence) for i in self.trigger_positions):
            raise ValueError("trigger position out of sentence range")


@dataclass(frozen=True)
class Dataset:
    examples: tuple[LabeledExample, ...]
    num_classes: int
    split_tag: str

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.split_tag not in SPLIT_TAGS:
            raise ValueError(f"split_tag must be one of {SPLIT_TAGS}, got {self.split_tag!r}")
        for ex in self.examples:
            if ex.label >= self.num_classes:
                raise ValueError(f"label {ex.label} out of range for {self.num_classes} classes")

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, i) -> LabeledExample:
        return self.examples[i]


def load_tsv(path: str | Path, num_classes: int, split_tag: str = "train") -> Dataset:
    """Load `text TAB label` lines (UTF-8, no header). Blank lines are skipped."""
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            text, sep, label_str = line.rpartition("\t")
            if not sep:
                raise DataError(f"missing tab separator at line {lineno} of {path}")
            try:
                label = int(label_str)
            except ValueError:
                raise DataError(f"non-integer label {label_str!r} at line {lineno} of {path}") from None
            if label < 0 or label >= num_classes:
                raise DataError(f"label out of range at line {lineno} of {path}")
            examples.append(LabeledExample(sentence=tokenize(text), label=label))
    return Dataset(examples=tuple(examples), num_classes=num_classes, split_tag=split_tag)


def save_tsv(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset:
            fh.write(f"{ex.sentence.text()}\t{ex.label}\n")


def synth_corpus(
    rng: np.random.Generator,
    num_classes: int,
    per_class: int,
    vocab_per_class: int = 30,
    len_range: tuple[int, int] = (8, 14),
) -> Dataset:
    """Generate a linearly separable synthetic corpus.

    Each class draws tokens i.i.d. from a 50/50 mixture of its own disjoint
    vocabulary and a vocabulary shared by all classes. Within each pool, word
    frequencies follow a Zipf-like profile (weight 1/(rank+1)^2), mirroring
    natural text: most tokens are common, a thin tail is rare. That skew is
    what keeps perplexity-based defenses from flagging ordinary words. The
    shared pool holds num_classes * vocab_per_class words so same-rank class
    and shared words come out equally frequent corpus-wide. Deterministic
    given the generator's seed. Split tag is left at "train"; retag with
    with_split_tag or build one corpus per split.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if vocab_per_class < 5:
        raise ValueError("vocab_per_class must be >= 5")
    lo, hi = len_range
    if not (1 <= lo <= hi):
        raise ValueError(f"invalid len_range {len_range}")

    def zipf_weights(size: int) -> np.ndarray:
        w = 1.0 / (np.arange(size) + 1.0) ** 2
        return w / w.sum()

    shared = [f"shared{j}" for j in range(num_classes * vocab_per_class)]
    class_vocabs = [[f"c{c}w{j}" for j in range(vocab_per_class)] for c in range(num_classes)]
    shared_w = zipf_weights(len(shared))
    class_w = zipf_weights(vocab_per_class)

    examples = []
    for c in range(num_classes):
        vocab = class_vocabs[c]
        for _ in range(per_class):
            n = int(rng.integers(lo, hi + 1))
            toks = []
            for _ in range(n):
                if rng.random() < 0.5:
                    toks.append(vocab[int(rng.choice(vocab_per_class, p=class_w))])
                else:
                    toks.append(shared[int(rng.choice(len(shared), p=shared_w))])
            examples.append(LabeledExample(sentence=Sentence(tuple(toks)), label=c))
    return Dataset(examples=tuple(examples), num_classes=num_classes, split_tag="train")


def with_split_tag(dataset: Dataset, split_tag: str) -> Dataset:
    return Dataset(examples=dataset.examples, num_classes=dataset.num_classes, split_tag=split_tag)


def frequency_table(dataset: Dataset) -> dict[str, int]:
    """Exact token counts over all sentences, iterating in (count desc, token asc) order."""
    if len(dataset) == 0:
        raise DataError("cannot build a frequency table from an empty dataset")
    counts: Counter[str] = Counter()
    for ex in dataset:
        counts.update(ex.sentence.tokens)
    return dict(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))
