"""Top-k cluster predictions shared by the k-means and head-based predictors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ClusterAssignment:
    """Per-row top-k cluster ids (descending confidence) and their confidences.

    ``confidence_source`` records how confidences were produced; a softmax
    over raw centroid similarities is not a calibrated probability, unlike
    the softmax output of a trained head.
    """

    ids: np.ndarray           # (n, k) int32
    confidences: np.ndarray   # (n, k) float32, non-increasing per row
    n_clusters: int
    confidence_source: str

    def __post_init__(self):
        if self.ids.shape != self.confidences.shape:
            raise ValueError("ids and confidences shapes differ")
        diffs = np.diff(self.confidences.astype(np.float64), axis=1)
        if diffs.size and diffs.max() > 1e-6:
            raise ValueError("confidences must be non-increasing per row")

    @property
    def n_rows(self) -> int:
        return self.ids.shape[0]

    @property
    def k(self) -> int:
        return self.ids.shape[1]

    @property
    def top1(self) -> np.ndarray:
        return self.ids[:, 0]

    @property
    def msp(self) -> np.ndarray:
        """Maximum softmax probability: the confidence of the top prediction."""
        return self.confidences[:, 0]


def topk_from_scores(
    scores: np.ndarray,
    k: int,
    confidences: np.ndarray | None = None,
    confidence_source: str = "softmax",
) -> ClusterAssignment:
    """Rank clusters per row by score (ties to the lower id) and keep the top k.

    ``confidences`` defaults to a softmax over the scores; pass the actual
    probability rows when the scores already are probabilities.
    """
    n, c = scores.shape
    if k > c:
        raise ValueError(f"k={k} exceeds the number of clusters {c}")
    if confidences is None:
        z = scores.astype(np.float64) - scores.max(axis=1, keepdims=True)
        e = np.exp(z)
        confidences = e / e.sum(axis=1, keepdims=True)
    # Stable sort on negated scores keeps ascending-id order among ties.
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    conf = np.take_along_axis(np.asarray(confidences, dtype=np.float64), order, axis=1)
    return ClusterAssignment(
        ids=order.astype(np.int32),
        confidences=conf.astype(np.float32),
        n_clusters=c,
        confidence_source=confidence_source,
    )
