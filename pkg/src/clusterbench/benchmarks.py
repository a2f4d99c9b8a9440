"""Benchmark families over a labeled dataset: imbalance, granularity, model-based.

All selectors are pure functions from a class histogram (or label vector) to
class sets or row masks, deterministic under their seeds, so benchmark specs
can be materialized in parallel and reproduced exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .feature_store import LabelVector


class BenchmarkError(Exception):
    pass


class AppliedToValSplit(BenchmarkError):
    pass


class KTooLarge(BenchmarkError):
    pass


@dataclass(frozen=True)
class ClassHistogram:
    """Per-class sample counts with a frequency rank (ascending count, ties by id)."""

    class_ids: np.ndarray   # sorted ascending
    counts: np.ndarray      # aligned with class_ids, all >= 1
    ranks: np.ndarray       # rank per listed class: 0 = least frequent

    @property
    def n_classes(self) -> int:
        return self.class_ids.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def by_rank(self) -> np.ndarray:
        """Class ids ordered rank 0..K-1."""
        out = np.empty(self.n_classes, dtype=np.int64)
        out[self.ranks] = self.class_ids
        return out


def class_histogram(labels: LabelVector) -> ClassHistogram:
    counts_full = np.bincount(labels.labels, minlength=labels.n_classes)
    present = np.flatnonzero(counts_full > 0)
    counts = counts_full[present]
    order = np.lexsort((present, counts))  # ascending count, ties by class id
    ranks = np.empty(present.shape[0], dtype=np.int64)
    ranks[order] = np.arange(present.shape[0])
    return ClassHistogram(class_ids=present, counts=counts, ranks=ranks)


def percentile_split(hist: ClassHistogram, half_width: float) -> set[int]:
    """Classes whose frequency-rank percentile lies within half_width of the median.

    The percentile of the class at rank r among K classes follows the
    mid-rank convention 100 * (r + 0.5) / K, so a half-width of 50 keeps
    every class and no boundary class is double-counted.
    """
    if not (0.0 < half_width <= 50.0):
        raise ValueError("half_width must lie in (0, 50]")
    if hist.n_classes == 0:
        raise ValueError("empty histogram")
    k = hist.n_classes
    pct = 100.0 * (np.arange(k) + 0.5) / k
    lo, hi = 50.0 - half_width, 50.0 + half_width
    keep_ranks = np.flatnonzero((pct >= lo) & (pct <= hi))
    by_rank = hist.by_rank()
    return set(int(c) for c in by_rank[keep_ranks])


def _centered_ranks(k: int, size: int) -> np.ndarray:
    """A contiguous rank window of ``size`` grown symmetrically around the median.

    Growth starts at the lower median and prefers the lower side on parity
    conflicts, so the window is deterministic.
    """
    lo = hi = (k - 1) // 2
    while hi - lo + 1 < size:
        if lo > 0 and ((hi - lo + 1) % 2 == 1 or hi == k - 1):
            lo -= 1
        else:
            hi += 1
    return np.arange(lo, hi + 1)


def imbalanced_pair(hist: ClassHistogram) -> tuple[set[int], set[int]]:
    """A deliberately imbalanced class set and its size-matched centered control.

    The imbalanced set is the 10-percentile window around the median plus the
    10% most frequent classes; the centered set widens a median window until
    both sets have the same cardinality.
    """
    if hist.n_classes < 20:
        raise ValueError("need at least 20 classes")
    k = hist.n_classes
    by_rank = hist.by_rank()
    median_window = percentile_split(hist, 10.0)
    n_top = max(1, math.ceil(k * 0.10))
    top = set(int(c) for c in by_rank[k - n_top :])
    imbalanced = median_window | top
    centered = set(int(c) for c in by_rank[_centered_ranks(k, len(imbalanced))])
    return imbalanced, centered


def odd_halving(labels: LabelVector, seed: int, split: str = "train") -> np.ndarray:
    """Row mask keeping a random ceil(n/2)-subset of every odd class's rows.

    Even classes are untouched. Only meaningful on the training split; the
    validation split must stay intact so the degradation can be measured.
    """
    if split != "train":
        raise AppliedToValSplit(f"odd_halving applies to the train split, got {split!r}")
    rng = np.random.default_rng(seed)
    mask = np.ones(labels.n_rows, dtype=bool)
    for cls in range(1, labels.n_classes, 2):
        rows = np.flatnonzero(labels.labels == cls)
        if rows.size == 0:
            continue
        keep = math.ceil(rows.size / 2)
        dropped = rng.choice(rows, size=rows.size - keep, replace=False)
        mask[dropped] = False
    return mask


def model_based_subset(per_class_acc: dict[int, float], k: int) -> set[int]:
    """The k classes with the highest per-class accuracy (ties to the lower id)."""
    if k > len(per_class_acc):
        raise KTooLarge(f"k={k} exceeds {len(per_class_acc)} classes")
    ranked = sorted(per_class_acc.items(), key=lambda kv: (-kv[1], kv[0]))
    return set(cls for cls, _ in ranked[:k])


def random_subset(classes: set[int], k: int, seed: int) -> set[int]:
    """Uniform k-subset of the class set, deterministic under the seed."""
    if k > len(classes):
        raise KTooLarge(f"k={k} exceeds {len(classes)} classes")
    rng = np.random.default_rng(seed)
    pool = np.array(sorted(classes), dtype=np.int64)
    return set(int(c) for c in rng.choice(pool, size=k, replace=False))


def load_per_class_acc(path: str | Path) -> dict[int, float]:
    """Read a per-class accuracy table from CSV (class_id, accuracy)."""
    table: dict[int, float] = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("class_id"):
            continue
        cls, acc = line.split(",")
        table[int(cls)] = float(acc)
    return table


@dataclass(frozen=True)
class BenchmarkSpec:
    """Declarative description of one benchmark; parameters depend on the kind."""

    kind: str   # percentile | imbalanced_pair | odd_halving | coarse | leaf |
                # random_k | model_based | union
    params: dict = field(default_factory=dict)
    note: str = ""

    REQUIRED = {
        "percentile": {"half_width"},
        "imbalanced_pair": {"side"},          # side: imbalanced | centered
        "odd_halving": {"seed"},
        "coarse": {"max_depth"},
        "leaf": set(),                        # optional: universe = dataset | tree
        "random_k": {"k", "seed"},
        "model_based": {"k"},                 # accuracy table via path or dict
        "union": {"specs"},
    }

    def validate(self) -> None:
        if self.kind not in self.REQUIRED:
            raise ValueError(f"unknown benchmark kind {self.kind!r}")
        missing = self.REQUIRED[self.kind] - set(self.params)
        if missing:
            raise ValueError(f"{self.kind}: missing parameters {sorted(missing)}")

    def to_json(self) -> str:
        return json.dumps(
            {"kind": self.kind, "params": self.params, "note": self.note},
            indent=2, sort_keys=True,
        ) + "\n"

    @staticmethod
    def from_json(text: str) -> "BenchmarkSpec":
        doc = json.loads(text)
        spec = BenchmarkSpec(kind=doc["kind"], params=doc.get("params", {}), note=doc.get("note", ""))
        spec.validate()
        return spec


def write_class_subset(
    path_prefix: str | Path,
    classes: set[int],
    spec: BenchmarkSpec,
    labels: LabelVector | None = None,
) -> None:
    """Emit the selected classes as CSV plus a provenance JSON next to it."""
    prefix = Path(path_prefix)
    ordered = sorted(classes)
    prefix.with_suffix(".classes.csv").write_text(
        "\n".join(str(c) for c in ordered) + "\n"
    )
    provenance = {"kind": spec.kind, "params": spec.params, "n_classes": len(ordered)}
    if labels is not None:
        counts = np.bincount(labels.labels, minlength=labels.n_classes)
        kept = counts[np.array(ordered, dtype=np.int64)]
        kept = kept[kept > 0]
        provenance["n_rows"] = int(kept.sum())
        if kept.size:
            provenance["imbalance_ratio"] = float(kept.max() / kept.min())
    prefix.with_suffix(".provenance.json").write_text(
        json.dumps(provenance, indent=2, sort_keys=True) + "\n"
    )
