"""Outlier-word removal defense driven by perplexity decrements.

Each word's suspicion score is the drop in sentence perplexity when that word
is removed. Words scoring strictly above a threshold are removed in a single
pass over one shared profile; the threshold can be tuned on a clean
validation set to cap the clean-accuracy cost, or left at the zero default.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable

from .lm import PerplexityScorer, leave_one_out_perplexities
from .textcore import Dataset, Sentence
from .victim import TextClassifier


@dataclass(frozen=True)
class SuspicionProfile:
    sentence: Sentence
    p0: float
    leave_one_out: tuple[float, ...]  # perplexity with token i removed
    scores: tuple[float, ...]  # p0 - leave_one_out[i]

    def __post_init__(self):
        if len(self.leave_one_out) != len(self.sentence) or len(self.scores) != len(self.sentence):
            raise ValueError("profile length does not match sentence length")


@dataclass(frozen=True)
class DefenseConfig:
    threshold: float
    scorer: PerplexityScorer

    def __post_init__(self):
        if math.isnan(self.threshold) or math.isinf(self.threshold):
            raise ValueError("threshold must be finite")


def suspicion_profile(scorer: PerplexityScorer, sentence: Sentence) -> SuspicionProfile:
    if len(sentence) == 0:
        raise ValueError("cannot profile an empty sentence")
    values = scorer.perplexities([sentence] + [sentence.without(i) for i in range(len(sentence))])
    p0 = values[0]
    loo = tuple(values[1:])
    return SuspicionProfile(
        sentence=sentence, p0=p0, leave_one_out=loo, scores=tuple(p0 - p for p in loo)
    )


def removal_indices(profile: SuspicionProfile, threshold: float) -> set[int]:
    """Indices with score strictly above the threshold.

    If every token exceeds it, the token with the smallest score (lowest index
    on ties) is retained so the output is never empty.
    """
    over = [i for i, f in enumerate(profile.scores) if f > threshold]
    if over and len(over) == len(profile.scores):
        keep = min(range(len(profile.scores)), key=lambda i: (profile.scores[i], i))
        over = [i for i in over if i != keep]
    return set(over)


def drop_indices(sentence: Sentence, removed: Iterable[int]) -> Sentence:
    removed = set(removed)
    return Sentence(tuple(t for i, t in enumerate(sentence.tokens) if i not in removed))


def sanitize(cfg: DefenseConfig, sentence: Sentence) -> tuple[Sentence, set[int]]:
    """One scoring pass, one removal pass; survivors keep their order."""
    profile = suspicion_profile(cfg.scorer, sentence)
    removed = removal_indices(profile, cfg.threshold)
    return drop_indices(sentence, removed), removed


def sanitize_default(scorer: PerplexityScorer, sentence: Sentence) -> tuple[Sentence, set[int]]:
    """sanitize with the empirical zero threshold."""
    return sanitize(DefenseConfig(threshold=0.0, scorer=scorer), sentence)


def make_sanitizer(cfg: DefenseConfig):
    """Sentence -> (sanitized, removed indices) closure for evaluation code."""

    def _sanitize(sentence: Sentence) -> tuple[Sentence, set[int]]:
        return sanitize(cfg, sentence)

    return _sanitize


def tune_threshold(
    scorer: PerplexityScorer,
    model: TextClassifier,
    validation: Dataset,
    max_cacc_drop: float = 0.02,
) -> float:
    """Smallest threshold whose sanitized validation accuracy stays within
    max_cacc_drop (an accuracy fraction: 0.02 = 2 points) of the unsanitized
    accuracy.

    Candidates are the distinct finite scores observed on the validation set
    plus 0; accuracy as a function of the threshold is a step function with
    breakpoints exactly there. If nothing qualifies the largest observed score
    is returned (defense effectively off) with a warning.
    """
    if len(validation) == 0:
        raise ValueError("validation set is empty")
    if any(ex.poisoned for ex in validation):
        raise ValueError("tune_threshold requires a clean validation set")
    if max_cacc_drop < 0:
        raise ValueError("max_cacc_drop must be nonnegative")

    profiles = [
        suspicion_profile(scorer, ex.sentence) if len(ex.sentence) else None for ex in validation
    ]
    finite = sorted(
        {f for prof in profiles if prof is not None for f in prof.scores if math.isfinite(f)}
    )
    candidates = sorted(set(finite) | {0.0})

    labels = [ex.label for ex in validation]
    base_preds = [model.predict_label(ex.sentence) for ex in validation]
    base_cacc = sum(p == y for p, y in zip(base_preds, labels)) / len(validation)

    pred_cache: list[dict[frozenset[int], int]] = [dict() for _ in validation]

    def cacc_at(threshold: float) -> float:
        correct = 0
        for j, (ex, prof) in enumerate(zip(validation, profiles)):
            if prof is None:
                pred = base_preds[j]
            else:
                removed = frozenset(removal_indices(prof, threshold))
                if not removed:
                    pred = base_preds[j]
                else:
                    pred = pred_cache[j].get(removed)
                    if pred is None:
                        pred = model.predict_label(drop_indices(ex.sentence, removed))
                        pred_cache[j][removed] = pred
            correct += pred == labels[j]
        return correct / len(validation)

    for t in candidates:
        if cacc_at(t) >= base_cacc - max_cacc_drop:
            return t
    fallback = finite[-1] if finite else 0.0
    warnings.warn(
        "no threshold kept the validation accuracy within the allowed drop; "
        f"returning {fallback} (defense effectively off)",
        stacklevel=2,
    )
    return fallback
