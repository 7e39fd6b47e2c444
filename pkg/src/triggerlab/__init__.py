"""Desk-scale lab for insertion-trigger backdoor attacks and defenses on text classifiers."""

__version__ = "0.1.0"

from .textcore import Dataset, LabeledExample, Sentence, make_rng, tokenize

__all__ = [
    "Dataset",
    "LabeledExample",
    "Sentence",
    "make_rng",
    "tokenize",
    "__version__",
]
