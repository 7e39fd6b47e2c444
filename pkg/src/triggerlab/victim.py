"""Trainable text classifier used as the backdoor victim.

Hashed bag-of-ngrams features (unigrams + bigrams, crc32 buckets,
L2-normalized) into multinomial logistic regression fit by mini-batch
gradient descent. Linear weights make the implanted backdoor auditable: the
trigger's hash buckets pick up large target-class weights.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .textcore import Dataset, Sentence

HASH_SPEC = "crc32-ngrams-v1"
MODEL_FORMAT = "textclf-v1"
MINI_BATCH = 32
DEFAULT_FEATURE_DIM = 8192


def _bucket(key: str, feature_dim: int) -> int:
    return zlib.crc32(key.encode("utf-8")) % feature_dim


def featurize(sentence: Sentence, feature_dim: int = DEFAULT_FEATURE_DIM) -> np.ndarray:
    """Unigram and bigram counts hashed into feature_dim buckets, L2-normalized."""
    if feature_dim < 2:
        raise ValueError("feature_dim must be >= 2")
    vec = np.zeros(feature_dim)
    toks = sentence.tokens
    for t in toks:
        vec[_bucket("u:" + t, feature_dim)] += 1.0
    for a, b in zip(toks, toks[1:]):
        vec[_bucket("b:" + a + " " + b, feature_dim)] += 1.0
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


def featurize_dataset(dataset: Dataset, feature_dim: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([featurize(ex.sentence, feature_dim) for ex in dataset])
    y = np.array([ex.label for ex in dataset], dtype=np.int64)
    return x, y


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    learning_rate: float = 2.0
    l2: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.l2 < 0:
            raise ValueError("l2 must be nonnegative")


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class TextClassifier:
    num_classes: int
    feature_dim: int
    weights: np.ndarray  # (num_classes, feature_dim)
    bias: np.ndarray  # (num_classes,)

    def __post_init__(self):
        if self.weights.shape != (self.num_classes, self.feature_dim):
            raise ValueError("weight matrix shape does not match num_classes x feature_dim")
        if self.bias.shape != (self.num_classes,):
            raise ValueError("bias shape does not match num_classes")

    def predict(self, sentence: Sentence) -> tuple[int, np.ndarray]:
        """Argmax of softmax scores; ties break toward the lower class id."""
        x = featurize(sentence, self.feature_dim)
        probs = softmax(self.weights @ x + self.bias)
        return int(np.argmax(probs)), probs

    def predict_label(self, sentence: Sentence) -> int:
        return self.predict(sentence)[0]


def loss_and_grad(
    weights: np.ndarray, bias: np.ndarray, x: np.ndarray, y: np.ndarray, l2: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean softmax cross-entropy plus (l2/2)*||W||^2; bias unregularized."""
    n = x.shape[0]
    probs = softmax(x @ weights.T + bias)
    loss = float(-np.mean(np.log(probs[np.arange(n), y]))) + 0.5 * l2 * float(np.sum(weights**2))
    g = probs.copy()
    g[np.arange(n), y] -= 1.0
    g /= n
    grad_w = g.T @ x + l2 * weights
    grad_b = g.sum(axis=0)
    return loss, grad_w, grad_b


def _descend(
    weights: np.ndarray, bias: np.ndarray, x: np.ndarray, y: np.ndarray, cfg: TrainConfig
) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    n = x.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, MINI_BATCH):
            idx = order[start : start + MINI_BATCH]
            _, gw, gb = loss_and_grad(weights, bias, x[idx], y[idx], cfg.l2)
            weights = weights - cfg.learning_rate * gw
            bias = bias - cfg.learning_rate * gb
    return weights, bias


def train(dataset: Dataset, cfg: TrainConfig, feature_dim: int = DEFAULT_FEATURE_DIM) -> TextClassifier:
    """Fit from zero weights; deterministic under cfg.seed."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if dataset.split_tag != "train":
        raise ValueError(f"train expects the train split, got {dataset.split_tag!r}")
    x, y = featurize_dataset(dataset, feature_dim)
    weights = np.zeros((dataset.num_classes, feature_dim))
    bias = np.zeros(dataset.num_classes)
    weights, bias = _descend(weights, bias, x, y, cfg)
    return TextClassifier(
        num_classes=dataset.num_classes, feature_dim=feature_dim, weights=weights, bias=bias
    )


def fine_tune(model: TextClassifier, clean: Dataset, cfg: TrainConfig) -> TextClassifier:
    """Continue gradient descent from the model's weights on clean data only."""
    if any(ex.poisoned for ex in clean):
        raise ValueError("fine_tune requires a dataset with no poisoned examples")
    if len(clean) == 0:
        raise ValueError("cannot fine-tune on an empty dataset")
    if clean.num_classes != model.num_classes:
        raise ValueError("class count mismatch between model and dataset")
    x, y = featurize_dataset(clean, model.feature_dim)
    weights, bias = _descend(model.weights.copy(), model.bias.copy(), x, y, cfg)
    return TextClassifier(
        num_classes=model.num_classes, feature_dim=model.feature_dim, weights=weights, bias=bias
    )


def save_model(model: TextClassifier, path: str | Path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "hash": HASH_SPEC,
        "num_classes": model.num_classes,
        "feature_dim": model.feature_dim,
        "weights": model.weights.tolist(),
        "bias": model.bias.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_model(path: str | Path) -> TextClassifier:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"unsupported model format {doc.get('format')!r}")
    if doc.get("hash") != HASH_SPEC:
        raise ValueError(f"model was built with a different feature hash: {doc.get('hash')!r}")
    return TextClassifier(
        num_classes=doc["num_classes"],
        feature_dim=doc["feature_dim"],
        weights=np.array(doc["weights"]),
        bias=np.array(doc["bias"]),
    )
