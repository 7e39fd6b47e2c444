"""Attack/defense metrics and diagnostic breakdowns.

ASR is accuracy on trigger-embedded samples (all relabeled to the target),
CACC is plain accuracy on clean samples, and the deltas are before-minus-after
a defense. Breakdown tables stratify those metrics by how many trigger/normal
words the defense removed; the score distribution and threshold sweep expose
why the defense works. All tables export to CSV; the report also renders as
text and JSON.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import onion
from .lm import PerplexityScorer
from .textcore import Dataset, DataError, Sentence
from .victim import TextClassifier

Sanitizer = Callable[[Sentence], tuple[Sentence, set[int]]]


def identity_sanitizer(sentence: Sentence) -> tuple[Sentence, set[int]]:
    return sentence, set()


def _target_label(poisoned_test: Dataset) -> int:
    if len(poisoned_test) == 0:
        raise DataError("poisoned test set is empty")
    labels = {ex.label for ex in poisoned_test}
    if len(labels) != 1:
        raise DataError(f"poisoned test set carries mixed labels {sorted(labels)}")
    if not all(ex.poisoned for ex in poisoned_test):
        raise DataError("poisoned test set contains unpoisoned examples")
    return labels.pop()


def _require_clean(clean_test: Dataset) -> None:
    if len(clean_test) == 0:
        raise DataError("clean test set is empty")
    if any(ex.poisoned for ex in clean_test):
        raise DataError("clean test set contains poisoned examples")


def asr(model: TextClassifier, poisoned_test: Dataset) -> float:
    """Fraction of trigger-embedded samples classified as the target label."""
    target = _target_label(poisoned_test)
    hits = sum(model.predict_label(ex.sentence) == target for ex in poisoned_test)
    return hits / len(poisoned_test)


def cacc(model: TextClassifier, clean_test: Dataset) -> float:
    """Plain accuracy on normal samples."""
    _require_clean(clean_test)
    hits = sum(model.predict_label(ex.sentence) == ex.label for ex in clean_test)
    return hits / len(clean_test)


@dataclass(frozen=True)
class DefenseReport:
    asr_before: float
    asr_after: float
    delta_asr: float
    cacc_before: float
    cacc_after: float
    delta_cacc: float
    detect_precision: float
    detect_recall: float
    removed_trigger_avg: float
    removed_normal_avg: float
    removed_normal_avg_clean: float
    zero_removals: bool

    def to_dict(self) -> dict:
        return {
            "asr_before": self.asr_before,
            "asr_after": self.asr_after,
            "delta_asr": self.delta_asr,
            "cacc_before": self.cacc_before,
            "cacc_after": self.cacc_after,
            "delta_cacc": self.delta_cacc,
            "detect_precision": self.detect_precision,
            "detect_recall": self.detect_recall,
            "removed_trigger_avg": self.removed_trigger_avg,
            "removed_normal_avg": self.removed_normal_avg,
            "removed_normal_avg_clean": self.removed_normal_avg_clean,
            "zero_removals": self.zero_removals,
        }

    def format_text(self) -> str:
        pct = lambda v: f"{100 * v:6.2f}"
        lines = [
            f"ASR   before/after/delta: {pct(self.asr_before)} / {pct(self.asr_after)} / {pct(self.delta_asr)}",
            f"CACC  before/after/delta: {pct(self.cacc_before)} / {pct(self.cacc_after)} / {pct(self.delta_cacc)}",
            f"trigger detection precision/recall: {pct(self.detect_precision)} / {pct(self.detect_recall)}"
            + ("  [no removals]" if self.zero_removals else ""),
            f"avg removed per poisoned sample: {self.removed_trigger_avg:.2f} trigger, "
            f"{self.removed_normal_avg:.2f} normal",
            f"avg removed per clean sample: {self.removed_normal_avg_clean:.2f}",
        ]
        return "\n".join(lines)


def evaluate_defense(
    model: TextClassifier,
    defense: Sanitizer,
    poisoned_test: Dataset,
    clean_test: Dataset,
) -> DefenseReport:
    """Run the model with and without sanitization on both test sets.

    Detection precision/recall use the ground-truth trigger positions of the
    poisoned set; with zero removals precision is reported as 1.0 alongside an
    explicit flag rather than NaN.
    """
    target = _target_label(poisoned_test)
    _require_clean(clean_test)

    hit_before = hit_after = 0
    trig_removed = norm_removed = trig_total = 0
    for ex in poisoned_test:
        hit_before += model.predict_label(ex.sentence) == target
        cleaned, removed = defense(ex.sentence)
        hit_after += model.predict_label(cleaned) == target
        overlap = len(set(removed) & ex.trigger_positions)
        trig_removed += overlap
        norm_removed += len(removed) - overlap
        trig_total += len(ex.trigger_positions)

    ok_before = ok_after = 0
    clean_removed = 0
    for ex in clean_test:
        ok_before += model.predict_label(ex.sentence) == ex.label
        cleaned, removed = defense(ex.sentence)
        ok_after += model.predict_label(cleaned) == ex.label
        clean_removed += len(removed)

    n_p, n_c = len(poisoned_test), len(clean_test)
    asr_before, asr_after = hit_before / n_p, hit_after / n_p
    cacc_before, cacc_after = ok_before / n_c, ok_after / n_c
    total_removed = trig_removed + norm_removed
    return DefenseReport(
        asr_before=asr_before,
        asr_after=asr_after,
        delta_asr=asr_before - asr_after,
        cacc_before=cacc_before,
        cacc_after=cacc_after,
        delta_cacc=cacc_before - cacc_after,
        detect_precision=trig_removed / total_removed if total_removed else 1.0,
        detect_recall=trig_removed / trig_total if trig_total else 1.0,
        removed_trigger_avg=trig_removed / n_p,
        removed_normal_avg=norm_removed / n_p,
        removed_normal_avg_clean=clean_removed / n_c,
        zero_removals=total_removed == 0,
    )


@dataclass(frozen=True)
class BreakdownTable:
    axes: tuple[str, ...]
    cells: dict[tuple, tuple[float, int]]  # key per axes -> (metric, sample count)
    total: int

    def __post_init__(self):
        if sum(count for _, count in self.cells.values()) != self.total:
            raise ValueError("breakdown cells do not partition the evaluated set")

    def write_csv(self, path: str | Path, metric_name: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(self.axes) + [metric_name, "count"])
            for key in sorted(self.cells, key=lambda k: tuple(str(p) for p in k)):
                value, count = self.cells[key]
                writer.writerow(list(key) + [f"{value:.6f}", count])


def _bucket(n: int, cap: int) -> str:
    return str(n) if n < cap else f"{cap}+"


def breakdown_asr(model: TextClassifier, defense: Sanitizer, poisoned_test: Dataset) -> BreakdownTable:
    """ASR stratified by (#trigger words removed, #normal words removed bucket)."""
    target = _target_label(poisoned_test)
    agg: dict[tuple, list[int]] = {}
    for ex in poisoned_test:
        cleaned, removed = defense(ex.sentence)
        n_t = len(set(removed) & ex.trigger_positions)
        n_n = len(removed) - n_t
        key = (n_t, _bucket(n_n, 4))
        hit = model.predict_label(cleaned) == target
        cell = agg.setdefault(key, [0, 0])
        cell[0] += hit
        cell[1] += 1
    cells = {k: (hits / count, count) for k, (hits, count) in agg.items()}
    return BreakdownTable(axes=("n_trigger_removed", "n_normal_removed"), cells=cells, total=len(poisoned_test))


def breakdown_cacc(model: TextClassifier, defense: Sanitizer, clean_test: Dataset) -> BreakdownTable:
    """CACC stratified by how many (normal) words were removed."""
    _require_clean(clean_test)
    agg: dict[tuple, list[int]] = {}
    for ex in clean_test:
        cleaned, removed = defense(ex.sentence)
        key = (_bucket(len(removed), 7),)
        ok = model.predict_label(cleaned) == ex.label
        cell = agg.setdefault(key, [0, 0])
        cell[0] += ok
        cell[1] += 1
    cells = {k: (ok / count, count) for k, (ok, count) in agg.items()}
    return BreakdownTable(axes=("n_normal_removed",), cells=cells, total=len(clean_test))


@dataclass(frozen=True)
class ScoreDistribution:
    trigger_scores: tuple[float, ...]
    normal_scores: tuple[float, ...]

    def median_trigger(self) -> float:
        return float(np.median(self.trigger_scores))

    def median_normal(self) -> float:
        return float(np.median(self.normal_scores))

    def write_csv(self, path: str | Path, bin_width: float = 1.0) -> None:
        """Histogram both populations on a shared fixed-width grid."""
        finite = [v for v in self.trigger_scores + self.normal_scores if math.isfinite(v)]
        lo = math.floor(min(finite) / bin_width) if finite else 0
        hi = math.floor(max(finite) / bin_width) if finite else 0
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_lo", "bin_hi", "trigger_count", "normal_count"])
            for b in range(lo, hi + 1):
                lo_edge, hi_edge = b * bin_width, (b + 1) * bin_width
                in_bin = lambda vals: sum(
                    1 for v in vals if math.isfinite(v) and lo_edge <= v < hi_edge
                )
                writer.writerow(
                    [f"{lo_edge:.6f}", f"{hi_edge:.6f}", in_bin(self.trigger_scores), in_bin(self.normal_scores)]
                )


def score_distribution(scorer: PerplexityScorer, poisoned_test: Dataset) -> ScoreDistribution:
    """Suspicion scores split by ground truth into trigger vs normal tokens."""
    _target_label(poisoned_test)  # validates non-empty, all poisoned
    trigger_scores: list[float] = []
    normal_scores: list[float] = []
    for ex in poisoned_test:
        profile = onion.suspicion_profile(scorer, ex.sentence)
        for i, f in enumerate(profile.scores):
            (trigger_scores if i in ex.trigger_positions else normal_scores).append(f)
    return ScoreDistribution(trigger_scores=tuple(trigger_scores), normal_scores=tuple(normal_scores))


def sweep_threshold(
    model: TextClassifier,
    scorer: PerplexityScorer,
    poisoned_test: Dataset,
    clean_test: Dataset,
    grid: Sequence[float],
) -> list[tuple[float, float, float]]:
    """(threshold, ASR, CACC) for each threshold in an ascending grid.

    Profiles are computed once per sentence and reused across thresholds;
    predictions are memoized per distinct removal set.
    """
    if len(grid) == 0:
        raise ValueError("threshold grid is empty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("threshold grid must be sorted ascending")
    target = _target_label(poisoned_test)
    _require_clean(clean_test)

    def prepared(dataset: Dataset):
        entries = []
        for ex in dataset:
            profile = onion.suspicion_profile(scorer, ex.sentence) if len(ex.sentence) else None
            entries.append((ex, profile, {}))
        return entries

    def predict_at(entry, threshold: float) -> int:
        ex, profile, cache = entry
        removed = frozenset(onion.removal_indices(profile, threshold)) if profile else frozenset()
        pred = cache.get(removed)
        if pred is None:
            pred = model.predict_label(onion.drop_indices(ex.sentence, removed))
            cache[removed] = pred
        return pred

    poisoned_entries = prepared(poisoned_test)
    clean_entries = prepared(clean_test)
    rows = []
    for t in grid:
        asr_t = sum(predict_at(e, t) == target for e in poisoned_entries) / len(poisoned_entries)
        cacc_t = sum(predict_at(e, t) == e[0].label for e in clean_entries) / len(clean_entries)
        rows.append((float(t), asr_t, cacc_t))
    return rows


def write_sweep_csv(rows: Sequence[tuple[float, float, float]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "asr", "cacc"])
        for t, a, c in rows:
            writer.writerow([f"{t:.6f}", f"{a:.6f}", f"{c:.6f}"])


def write_report_json(report: DefenseReport, path: str | Path, extra: dict | None = None) -> None:
    doc = dict(extra or {})
    doc["defense_report"] = report.to_dict()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
