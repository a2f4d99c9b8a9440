"""Exact top-k nearest-neighbor mining in cosine space over normalized features.

Queries are scanned in row blocks against the full matrix (a blocked exact
search, not an approximate index); similarities are accumulated in float64 so
results are independent of the block size, and ties are broken toward the
lower row id so results are reproducible bit for bit.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .feature_store import FeatureMatrix, LabelVector, read_array, write_array


class NeighborsError(Exception):
    pass


class KTooLarge(NeighborsError):
    pass


class NotNormalized(NeighborsError):
    pass


@dataclass(frozen=True)
class NeighborTable:
    """Per-row top-k neighbor ids with similarities sorted descending."""

    ids: np.ndarray            # (n, k) int64
    similarities: np.ndarray   # (n, k) float32, non-increasing per row

    def __post_init__(self):
        if self.ids.shape != self.similarities.shape:
            raise ValueError("ids and similarities shapes differ")

    @property
    def n_rows(self) -> int:
        return self.ids.shape[0]

    @property
    def k(self) -> int:
        return self.ids.shape[1]


def _block_topk(sims: np.ndarray, start: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    rows = np.arange(sims.shape[0])
    sims[rows, rows + start] = -np.inf  # exclude self
    # Stable argsort on the negated similarities keeps ties in ascending-id order.
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    top = np.take_along_axis(sims, order, axis=1)
    return order, top


def mine_knn(
    features: FeatureMatrix, k: int, block: int = 1024, threads: int = 1
) -> NeighborTable:
    """Exact top-k neighbors by dot product, self excluded.

    ``block`` tiles the query rows; ``threads`` parallelizes over tiles. The
    output is written into disjoint row ranges, so neither knob changes the
    result.
    """
    if not features.normalized:
        raise NotNormalized("mine_knn requires row-normalized features")
    n = features.n_rows
    if k >= n:
        raise KTooLarge(f"k={k} must be smaller than n_rows={n}")
    if block < 1:
        raise ValueError("block must be >= 1")
    x = features.values.astype(np.float64)
    ids = np.empty((n, k), dtype=np.int64)
    sims = np.empty((n, k), dtype=np.float64)

    def scan(start: int) -> None:
        stop = min(start + block, n)
        s = x[start:stop] @ x.T
        order, top = _block_topk(s, start, k)
        ids[start:stop] = order
        sims[start:stop] = top

    starts = range(0, n, block)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(scan, starts))
    else:
        for start in starts:
            scan(start)
    return NeighborTable(ids=ids, similarities=sims.astype(np.float32))


def true_positive_pairs(table: NeighborTable, labels: LabelVector) -> np.ndarray:
    """All (query, neighbor) pairs whose rows share the same label, as an (m, 2) array."""
    if table.n_rows != labels.n_rows:
        raise ValueError("neighbor table and labels row counts differ")
    queries = np.repeat(np.arange(table.n_rows), table.k)
    neigh = table.ids.reshape(-1)
    mask = labels.labels[queries] == labels.labels[neigh]
    return np.stack([queries[mask], neigh[mask]], axis=1)


def save_neighbors(path_prefix: str | Path, table: NeighborTable) -> None:
    """Persist ids (u32) and similarities (f32) as two sibling binary files."""
    prefix = Path(path_prefix)
    write_array(prefix.with_suffix(".ids.fbcf"), table.ids.astype(np.uint32))
    write_array(prefix.with_suffix(".sims.fbcf"), table.similarities.astype(np.float32))


def load_neighbors(path_prefix: str | Path) -> NeighborTable:
    prefix = Path(path_prefix)
    ids = np.asarray(read_array(prefix.with_suffix(".ids.fbcf"))).astype(np.int64)
    sims = np.asarray(read_array(prefix.with_suffix(".sims.fbcf")))
    return NeighborTable(ids=ids, similarities=sims)
