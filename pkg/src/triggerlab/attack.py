"""Poisoned training/test set construction via insertion triggers.

Two trigger families: random word insertion (with rare, middle-frequency, or
high-frequency trigger words) and fixed-sentence insertion. Poisoned examples
keep every original token; trigger_positions records exactly where the
inserted tokens landed, so removing them recovers the original sentence.
"""

from __future__ import annotations

import json
import math
import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .textcore import (
    Dataset,
    DataError,
    LabeledExample,
    Sentence,
    frequency_table,
    make_rng,
    save_tsv,
    tokenize,
)

RARE_TRIGGER_POOL = ("cf", "mn", "bb", "tq", "mb")
DEFAULT_TRIGGER_SENTENCE = "i watched this 3d movie"
TRIGGER_TIERS = ("rare", "middle", "high")
GROUND_TRUTH_FORMAT = "poison-ground-truth-v1"


@dataclass(frozen=True)
class TriggerSpec:
    kind: str  # word_insertion | sentence_insertion
    target_label: int
    trigger_words: tuple[str, ...] = ()
    trigger_sentence: Sentence | None = None
    insertions_per_sample: int = 1

    def __post_init__(self):
        if self.kind not in ("word_insertion", "sentence_insertion"):
            raise ValueError(f"unknown trigger kind {self.kind!r}")
        if self.target_label < 0:
            raise ValueError("target_label must be >= 0")
        if self.kind == "word_insertion":
            if not self.trigger_words:
                raise ValueError("word_insertion needs a non-empty trigger word list")
            if self.insertions_per_sample < 1:
                raise ValueError("insertions_per_sample must be >= 1")
            object.__setattr__(self, "trigger_words", tuple(w.lower() for w in self.trigger_words))
        else:
            if self.trigger_sentence is None or len(self.trigger_sentence) == 0:
                raise ValueError("sentence_insertion needs a non-empty trigger sentence")


@dataclass(frozen=True)
class PoisonPlan:
    spec: TriggerSpec
    poison_rate: float
    seed: int

    def __post_init__(self):
        if not 0.0 < self.poison_rate <= 1.0:
            raise ValueError(f"poison_rate must be in (0, 1], got {self.poison_rate}")


def select_triggers(
    freq: dict[str, int], tier: str, count: int, rng: np.random.Generator
) -> tuple[str, ...]:
    """Pick trigger words from a frequency tier.

    rare: fixed out-of-vocabulary pool, then generated two-letter strings the
    vocabulary does not contain. middle: uniform draw from the 40th-60th
    frequency-rank percentile. high: uniform draw from the top decile.
    """
    if tier not in TRIGGER_TIERS:
        raise ValueError(f"unknown trigger tier {tier!r}")
    if count < 1:
        raise ValueError("count must be >= 1")
    vocab = set(freq)
    if tier == "rare":
        chosen = [w for w in RARE_TRIGGER_POOL if w not in vocab][:count]
        letters = string.ascii_lowercase
        while len(chosen) < count:
            candidate = letters[int(rng.integers(26))] + letters[int(rng.integers(26))]
            if candidate not in vocab and candidate not in chosen:
                chosen.append(candidate)
        return tuple(chosen)

    ranked = list(freq)  # frequency_table order: count desc, token asc
    v = len(ranked)
    if tier == "middle":
        eligible = ranked[math.floor(0.4 * v) : math.ceil(0.6 * v)]
    else:
        eligible = ranked[: math.ceil(v / 10)]
    if len(eligible) < count:
        raise DataError(
            f"tier {tier!r} has only {len(eligible)} eligible tokens, need {count}"
        )
    picks = rng.choice(len(eligible), size=count, replace=False)
    return tuple(eligible[int(i)] for i in picks)


def poison_example(ex: LabeledExample, spec: TriggerSpec, rng: np.random.Generator) -> LabeledExample:
    """Insert the trigger, flip the label to the target, and record positions."""
    if ex.poisoned:
        raise ValueError("example is already poisoned")
    toks = list(ex.sentence.tokens)
    positions: list[int] = []
    if spec.kind == "word_insertion":
        for _ in range(spec.insertions_per_sample):
            word = spec.trigger_words[int(rng.integers(len(spec.trigger_words)))]
            pos = int(rng.integers(len(toks) + 1))
            toks.insert(pos, word)
            positions = [p + 1 if p >= pos else p for p in positions]
            positions.append(pos)
    else:
        trig = spec.trigger_sentence.tokens
        pos = int(rng.integers(len(toks) + 1))
        toks[pos:pos] = trig
        positions = list(range(pos, pos + len(trig)))
    return LabeledExample(
        sentence=Sentence(tuple(toks)),
        label=spec.target_label,
        poisoned=True,
        trigger_positions=frozenset(positions),
    )


def poison_dataset(dataset: Dataset, plan: PoisonPlan) -> Dataset:
    """Poison a random subset of non-target-label training examples.

    The subset size is ceil(poison_rate * |dataset|), capped at the number of
    eligible examples; order is preserved and the result is deterministic
    under the plan seed.
    """
    if dataset.split_tag != "train":
        raise ValueError(f"poison_dataset expects the train split, got {dataset.split_tag!r}")
    rng = make_rng(plan.seed)
    eligible = [i for i, ex in enumerate(dataset) if ex.label != plan.spec.target_label]
    if not eligible:
        raise DataError("no examples outside the target class to poison")
    k = min(math.ceil(plan.poison_rate * len(dataset)), len(eligible))
    chosen = set(int(i) for i in rng.choice(np.array(eligible), size=k, replace=False))
    examples = tuple(
        poison_example(ex, plan.spec, rng) if i in chosen else ex for i, ex in enumerate(dataset)
    )
    return Dataset(examples=examples, num_classes=dataset.num_classes, split_tag="train")


def poison_test_set(dataset: Dataset, spec: TriggerSpec, rng: np.random.Generator) -> Dataset:
    """Trigger-embed every test example whose label must flip.

    Examples already carrying the target label are dropped: attack success is
    only meaningful on inputs whose prediction has to change.
    """
    if dataset.split_tag != "test":
        raise ValueError(f"poison_test_set expects the test split, got {dataset.split_tag!r}")
    examples = tuple(
        poison_example(ex, spec, rng) for ex in dataset if ex.label != spec.target_label
    )
    if not examples:
        raise DataError("every test example already has the target label")
    return Dataset(examples=examples, num_classes=dataset.num_classes, split_tag="test")


def spec_from_config(config: dict, dataset: Dataset | None = None) -> TriggerSpec:
    """Build a TriggerSpec from a JSON-style dict.

    When word triggers are not given explicitly, they are selected from the
    dataset's frequency table using the configured tier ("rare" needs no
    dataset).
    """
    kind = config.get("kind", "word_insertion")
    target = int(config.get("target_label", 1))
    if kind == "sentence_insertion":
        text = config.get("trigger_sentence") or DEFAULT_TRIGGER_SENTENCE
        return TriggerSpec(kind=kind, target_label=target, trigger_sentence=tokenize(text))
    insertions = int(config.get("insertions_per_sample", 1))
    words = config.get("trigger_words")
    if not words:
        tier = config.get("tier", "rare")
        count = int(config.get("trigger_word_count", insertions))
        seed = int(config.get("seed", 0))
        freq = frequency_table(dataset) if dataset is not None else {}
        if tier != "rare" and not freq:
            raise DataError(f"tier {tier!r} trigger selection needs a dataset")
        words = select_triggers(freq, tier, count, make_rng(seed))
    return TriggerSpec(
        kind=kind,
        target_label=target,
        trigger_words=tuple(words),
        insertions_per_sample=insertions,
    )


def plan_from_config(config: dict, dataset: Dataset | None = None) -> PoisonPlan:
    return PoisonPlan(
        spec=spec_from_config(config, dataset),
        poison_rate=float(config.get("poison_rate", 0.1)),
        seed=int(config.get("seed", 0)),
    )


def save_poisoned(dataset: Dataset, tsv_path: str | Path, sidecar_path: str | Path) -> None:
    """Write the TSV plus a ground-truth sidecar of poisoned lines.

    The sidecar is for evaluation only; defenses never read it.
    """
    save_tsv(dataset, tsv_path)
    entries = [
        {"line": i + 1, "trigger_positions": sorted(ex.trigger_positions)}
        for i, ex in enumerate(dataset)
        if ex.poisoned
    ]
    doc = {
        "format": GROUND_TRUTH_FORMAT,
        "num_classes": dataset.num_classes,
        "split_tag": dataset.split_tag,
        "entries": entries,
    }
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_poisoned(tsv_path: str | Path, sidecar_path: str | Path) -> Dataset:
    with open(sidecar_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != GROUND_TRUTH_FORMAT:
        raise DataError(f"unsupported ground-truth format {doc.get('format')!r}")
    from .textcore import load_tsv

    base = load_tsv(tsv_path, doc["num_classes"], split_tag=doc["split_tag"])
    flagged = {entry["line"]: entry["trigger_positions"] for entry in doc["entries"]}
    examples = []
    for i, ex in enumerate(base):
        positions = flagged.get(i + 1)
        if positions is None:
            examples.append(ex)
        else:
            examples.append(
                LabeledExample(
                    sentence=ex.sentence,
                    label=ex.label,
                    poisoned=True,
                    trigger_positions=frozenset(positions),
                )
            )
    return Dataset(examples=tuple(examples), num_classes=base.num_classes, split_tag=base.split_tag)
