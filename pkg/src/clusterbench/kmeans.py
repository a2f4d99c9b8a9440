"""Spherical k-means: cosine-space Lloyd iterations with unit-norm centroids.

Assignment is blocked over query rows and may fan out to a thread pool; all
reductions happen in a fixed order (block index, then row index), so the
thread count never changes the result. Empty clusters are repaired by
stealing the worst-assigned row from a donor cluster with at least two
members, which keeps the mean-similarity objective non-decreasing.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assignment import ClusterAssignment, topk_from_scores
from .feature_store import FeatureMatrix, read_array, write_array


class KMeansError(Exception):
    pass


class CTooLarge(KMeansError):
    pass


class NotNormalized(KMeansError):
    pass


class DimensionMismatch(KMeansError):
    pass


@dataclass
class Centroids:
    """Fitted unit-norm cluster centers plus the per-iteration objective trace."""

    values: np.ndarray                    # (c, d) float32, rows unit-norm
    n_iter: int
    objective_history: list[float]        # mean max cosine similarity per iteration
    repairs: list[tuple[int, int]] = field(default_factory=list)  # (iteration, count)

    @property
    def n_clusters(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]


def _assign_blocks(
    x: np.ndarray, centroids: np.ndarray, block: int, threads: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-row argmax centroid (ties to the lower id) and the winning similarity."""
    n = x.shape[0]
    labels = np.empty(n, dtype=np.int64)
    best = np.empty(n, dtype=np.float64)

    def scan(start: int) -> None:
        stop = min(start + block, n)
        sims = x[start:stop] @ centroids.T
        labels[start:stop] = np.argmax(sims, axis=1)
        best[start:stop] = sims[np.arange(stop - start), labels[start:stop]]

    starts = range(0, n, block)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(scan, starts))
    else:
        for start in starts:
            scan(start)
    return labels, best


def _repair_empty(labels: np.ndarray, best: np.ndarray, c: int) -> int:
    """Give each empty cluster the globally worst-assigned row from a donor of size >= 2."""
    sizes = np.bincount(labels, minlength=c)
    repaired = 0
    for empty in np.flatnonzero(sizes == 0):
        donors = sizes[labels] >= 2
        if not donors.any():
            raise KMeansError("cannot repair empty cluster: all clusters are singletons")
        cand = np.flatnonzero(donors)
        worst = cand[np.argmin(best[cand])]  # argmin takes the lowest row id on ties
        sizes[labels[worst]] -= 1
        labels[worst] = empty
        sizes[empty] += 1
        repaired += 1
    return repaired


def _init_centroids(
    x: np.ndarray, c: int, init: str, rng: np.random.Generator, init_ids=None
) -> np.ndarray:
    n = x.shape[0]
    if init_ids is not None:
        ids = np.asarray(init_ids, dtype=np.int64)
        if ids.shape[0] != c:
            raise ValueError("init_ids length must equal c")
        return x[ids].copy()
    if init == "random_rows":
        return x[rng.choice(n, size=c, replace=False)].copy()
    if init == "kmeanspp":
        chosen = [int(rng.integers(n))]
        for _ in range(1, c):
            sims = x @ x[chosen].T
            d2 = np.clip(1.0 - sims.max(axis=1), 0.0, None)
            total = d2.sum()
            if total <= 0.0:
                remaining = np.setdiff1d(np.arange(n), np.array(chosen))
                chosen.append(int(rng.choice(remaining)))
            else:
                chosen.append(int(rng.choice(n, p=d2 / total)))
        return x[np.array(chosen)].copy()
    raise ValueError(f"unknown init {init!r}")


def kmeans_fit(
    features: FeatureMatrix,
    c: int,
    init: str = "kmeanspp",
    max_iter: int = 100,
    tol: float = 1e-6,
    seed: int = 0,
    block: int = 4096,
    threads: int = 1,
    init_ids=None,
) -> Centroids:
    """Lloyd iterations in cosine space with per-iteration centroid renormalization.

    Rows go to the max-dot-product centroid; each centroid becomes the
    L2-normalized mean of its members. Stops at ``max_iter`` or when the
    objective (mean winning similarity) improves by less than ``tol``.
    """
    if not features.normalized:
        raise NotNormalized("kmeans_fit requires row-normalized features")
    n = features.n_rows
    if c > n:
        raise CTooLarge(f"c={c} exceeds n_rows={n}")
    rng = np.random.default_rng(seed)
    x = features.values.astype(np.float64)
    centroids = _init_centroids(x, c, init, rng, init_ids)
    history: list[float] = []
    repairs: list[tuple[int, int]] = []
    it = 0
    for it in range(1, max_iter + 1):
        labels, best = _assign_blocks(x, centroids, block, threads)
        history.append(float(best.mean()))
        n_repaired = _repair_empty(labels, best, c)
        if n_repaired:
            repairs.append((it, n_repaired))
        sums = np.zeros((c, x.shape[1]))
        np.add.at(sums, labels, x)  # sequential scatter-add: deterministic
        counts = np.bincount(labels, minlength=c).astype(np.float64)
        means = sums / counts[:, None]
        norms = np.linalg.norm(means, axis=1)
        degenerate = norms < 1e-12  # e.g. an exactly antipodal member pair
        safe = np.where(degenerate[:, None], centroids, means / np.maximum(norms, 1e-300)[:, None])
        centroids = safe
        if len(history) >= 2 and history[-1] - history[-2] < tol:
            break
    return Centroids(
        values=centroids.astype(np.float32),
        n_iter=it,
        objective_history=history,
        repairs=repairs,
    )


def kmeans_predict_topk(
    centroids: Centroids, features: FeatureMatrix, k: int
) -> ClusterAssignment:
    """Top-k closest centroids per row, confidences as a softmax over similarities.

    The softmax is a ranking convenience, not a calibrated probability; the
    result is flagged accordingly via ``confidence_source``.
    """
    if features.n_cols != centroids.n_cols:
        raise DimensionMismatch(
            f"features have {features.n_cols} columns, centroids {centroids.n_cols}"
        )
    if k > centroids.n_clusters:
        raise KMeansError(f"k={k} exceeds c={centroids.n_clusters}")
    sims = features.values.astype(np.float64) @ centroids.values.astype(np.float64).T
    return topk_from_scores(sims, k, confidence_source="kmeans_similarity_softmax")


def save_centroids(path: str | Path, centroids: Centroids) -> None:
    write_array(path, centroids.values)


def load_centroids(path: str | Path) -> Centroids:
    values = np.asarray(read_array(path))
    return Centroids(values=values, n_iter=0, objective_history=[])


def write_run_log(path: str | Path, centroids: Centroids) -> None:
    repairs = dict(centroids.repairs)
    lines = ["iteration,objective,empty_repairs"]
    for i, obj in enumerate(centroids.objective_history, start=1):
        lines.append(f"{i},{obj!r},{repairs.get(i, 0)}")
    Path(path).write_text("\n".join(lines) + "\n")
