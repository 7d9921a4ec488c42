"""Transductive classification of a query set against class prototypes.

Two softmax directions are combined: each query distributes one unit of
probability over the prototypes (row-stochastic), and each prototype
distributes one unit of attention over the whole query set
(column-stochastic). Their elementwise product is the bi-directional
similarity; predictions take the argmax per query with ties broken toward
the lowest class index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import MetricMatrix
from .errors import ParameterError
from .metric import pairwise_distances

MODES = ("positive_only", "bisim")


@dataclass(frozen=True)
class SimilarityTable:
    """Query-by-prototype similarity tables plus per-query predictions.

    ``positive`` rows sum to 1, ``negative`` columns sum to 1, and
    ``bisim`` is their elementwise product.
    """

    positive: np.ndarray
    negative: np.ndarray
    bisim: np.ndarray
    predictions: np.ndarray


def _softmax(logits: np.ndarray, axis: int) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def classify(
    query_x: np.ndarray,
    prototypes: np.ndarray,
    m: MetricMatrix,
    mode: str = "bisim",
    squared: bool = False,
) -> SimilarityTable:
    """Score every query against every prototype under the metric ``m``.

    Distances enter the softmaxes unsquared by default; ``squared=True``
    switches to squared distances for baseline comparisons. Softmaxes are
    max-shifted for numerical stability.
    """
    if mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}, got {mode!r}")
    query_x = np.asarray(query_x, dtype=np.float64)
    prototypes = np.asarray(prototypes, dtype=np.float64)
    if query_x.ndim != 2 or query_x.shape[0] < 1:
        raise ParameterError("need at least one query row")
    if prototypes.ndim != 2 or prototypes.shape[0] < 2:
        raise ParameterError("need at least two prototypes")
    if query_x.shape[1] != prototypes.shape[1]:
        raise ParameterError(
            f"query dim {query_x.shape[1]} != prototype dim {prototypes.shape[1]}"
        )
    dist = pairwise_distances(m, query_x, prototypes, squared=squared)
    positive = _softmax(-dist, axis=1)
    negative = _softmax(-dist, axis=0)
    bisim = positive * negative
    scores = bisim if mode == "bisim" else positive
    predictions = np.argmax(scores, axis=1)
    return SimilarityTable(positive, negative, bisim, predictions)


def score(table: SimilarityTable, true_labels: np.ndarray) -> float:
    """Fraction of predictions matching the true labels."""
    true_labels = np.asarray(true_labels)
    if true_labels.shape != table.predictions.shape:
        raise ParameterError(
            f"expected {table.predictions.shape[0]} labels, got {true_labels.shape}"
        )
    return float(np.mean(table.predictions == true_labels))
