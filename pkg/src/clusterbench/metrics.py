"""Hungarian-matched accuracy family, NMI, calibration, and cluster-validity indices."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .assignment import ClusterAssignment
from .feature_store import FeatureMatrix, LabelVector, MultiLabelSets


class MetricsError(Exception):
    pass


class LengthMismatch(MetricsError):
    pass


class EmptyInput(MetricsError):
    pass


class SingleCluster(MetricsError):
    pass


class KExceedsC(MetricsError):
    pass


# ---------------------------------------------------------------------------
# Hungarian mapping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Assignment:
    """One-to-one cluster -> class mapping maximizing total agreement."""

    mapping: dict[int, int]
    agreement: int
    n_pred: int
    n_gt: int

    def apply(self, pred_ids: np.ndarray) -> np.ndarray:
        """Map cluster ids to class ids; unmatched clusters become -1."""
        lut = np.full(self.n_pred, -1, dtype=np.int64)
        for cluster, cls in self.mapping.items():
            lut[cluster] = cls
        return lut[pred_ids]


def contingency_matrix(pred: np.ndarray, gt: np.ndarray, n_pred: int, n_gt: int) -> np.ndarray:
    if pred.shape[0] != gt.shape[0]:
        raise LengthMismatch("pred and gt lengths differ")
    mat = np.zeros((n_pred, n_gt), dtype=np.int64)
    np.add.at(mat, (pred, gt), 1)
    return mat


def _max_agreement(counts: np.ndarray) -> int:
    if counts.shape[0] == 0 or counts.shape[1] == 0:
        return 0
    rows, cols = linear_sum_assignment(counts, maximize=True)
    return int(counts[rows, cols].sum())


def hungarian(contingency: np.ndarray) -> Assignment:
    """Optimal one-to-one mapping by agreement, lexicographically smallest among optima.

    The optimum is found with the Kuhn-Munkres solver; ties are then resolved
    by fixing clusters in ascending id order to the smallest class id that
    still admits an optimal completion (an unmatched cluster ranks after any
    class). Rectangular matrices match min(n_pred, n_gt) clusters.
    """
    contingency = np.asarray(contingency)
    if contingency.ndim != 2:
        raise ValueError("contingency must be 2-D")
    if contingency.size and contingency.min() < 0:
        raise ValueError("contingency entries must be non-negative")
    n_pred, n_gt = contingency.shape
    target = _max_agreement(contingency)
    rows = list(range(n_pred))
    cols = list(range(n_gt))
    remaining = target
    mapping: dict[int, int] = {}
    for i in range(n_pred):
        rows.remove(i)
        chosen = None
        if len(cols) > len(rows):
            # Every remaining column still fits; cluster i must take one.
            feasible_skip = False
        else:
            feasible_skip = _max_agreement(contingency[np.ix_(rows, cols)]) == remaining
        for j in cols:
            rest = _max_agreement(
                contingency[np.ix_(rows, [c for c in cols if c != j])]
            )
            if contingency[i, j] + rest == remaining:
                chosen = j
                break
        if chosen is None:
            if not feasible_skip:
                raise MetricsError("internal error: no optimal completion found")
        else:
            mapping[i] = chosen
            remaining -= int(contingency[i, chosen])
            cols.remove(chosen)
    return Assignment(mapping=mapping, agreement=target, n_pred=n_pred, n_gt=n_gt)


# ---------------------------------------------------------------------------
# Accuracy family
# ---------------------------------------------------------------------------

def _primary_of(gt: LabelVector | MultiLabelSets) -> np.ndarray:
    return gt.primary if isinstance(gt, MultiLabelSets) else gt.labels


def _fit_mapping(top1: np.ndarray, gt: LabelVector | MultiLabelSets, n_pred: int) -> Assignment:
    primary = _primary_of(gt)
    counts = contingency_matrix(top1, primary, n_pred, gt.n_classes)
    return hungarian(counts)


def _hits_multi(mapped: np.ndarray, sets: Sequence[frozenset[int]]) -> np.ndarray:
    return np.array([m in s for m, s in zip(mapped.tolist(), sets)], dtype=bool)


def acc_top1(
    pred: ClusterAssignment,
    gt: LabelVector | MultiLabelSets,
    mode: str = "single",
    assignment: Assignment | None = None,
) -> float:
    """Hungarian-mapped top-1 accuracy; ``multi`` counts a hit inside the label set."""
    if pred.n_rows != gt.n_rows:
        raise LengthMismatch("pred and gt lengths differ")
    if assignment is None:
        assignment = _fit_mapping(pred.top1, gt, pred.n_clusters)
    mapped = assignment.apply(pred.top1)
    if mode == "single":
        return float(np.mean(mapped == _primary_of(gt)))
    if mode == "multi":
        if not isinstance(gt, MultiLabelSets):
            raise ValueError("multi mode requires MultiLabelSets")
        return float(np.mean(_hits_multi(mapped, gt.sets)))
    raise ValueError(f"unknown mode {mode!r}")


def acc_topk(
    pred: ClusterAssignment,
    gt: LabelVector | MultiLabelSets,
    mode: str,
    assignment: Assignment,
) -> float:
    """Top-k accuracy under a mapping already estimated from the top-1 predictions."""
    if pred.k > pred.n_clusters:
        raise KExceedsC(f"k={pred.k} exceeds C={pred.n_clusters}")
    if pred.n_rows != gt.n_rows:
        raise LengthMismatch("pred and gt lengths differ")
    mapped = assignment.apply(pred.ids)  # (n, k), -1 where unmatched
    if mode == "single":
        hits = (mapped == _primary_of(gt)[:, None]).any(axis=1)
    elif mode == "multi":
        if not isinstance(gt, MultiLabelSets):
            raise ValueError("multi mode requires MultiLabelSets")
        hits = np.array(
            [bool(set(row) & s) for row, s in zip(mapped.tolist(), gt.sets)], dtype=bool
        )
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return float(np.mean(hits))


def acc_top5(
    pred: ClusterAssignment,
    gt: LabelVector | MultiLabelSets,
    mode: str,
    assignment: Assignment,
) -> float:
    if pred.k < 5:
        raise ValueError("need top-5 predictions")
    trimmed = ClusterAssignment(
        ids=pred.ids[:, :5],
        confidences=pred.confidences[:, :5],
        n_clusters=pred.n_clusters,
        confidence_source=pred.confidence_source,
    )
    return acc_topk(trimmed, gt, mode, assignment)


def accuracy_family(
    pred: ClusterAssignment, multilabels: MultiLabelSets
) -> dict[str, float]:
    """All four accuracies with f estimated once from the top-1 predictions.

    The ordering chain top1->1 <= {top1->L, top5->1} <= top5->L holds by
    construction and is asserted on every call.
    """
    assignment = _fit_mapping(pred.top1, multilabels, pred.n_clusters)
    out = {
        "acc_top1": acc_top1(pred, multilabels, "single", assignment),
        "acc_top1_multi": acc_top1(pred, multilabels, "multi", assignment),
    }
    if pred.k >= 5 and pred.n_clusters >= 5:
        out["acc_top5"] = acc_top5(pred, multilabels, "single", assignment)
        out["acc_top5_multi"] = acc_top5(pred, multilabels, "multi", assignment)
        chain = (
            out["acc_top1"] <= out["acc_top1_multi"] + 1e-12
            and out["acc_top1"] <= out["acc_top5"] + 1e-12
            and out["acc_top5"] <= out["acc_top5_multi"] + 1e-12
            and out["acc_top1_multi"] <= out["acc_top5_multi"] + 1e-12
        )
        if not chain:
            raise MetricsError(f"accuracy ordering chain violated: {out}")
    elif out["acc_top1"] > out["acc_top1_multi"] + 1e-12:
        raise MetricsError(f"accuracy ordering chain violated: {out}")
    return out


def real_protocol(
    pred: ClusterAssignment,
    multilabels: MultiLabelSets,
    repeats: int = 50,
    seed: int = 0,
) -> dict[str, tuple[float, float]]:
    """Repeat-sampling protocol for reassessed label sets.

    Per repeat one label is drawn uniformly from each row's set to act as the
    single ground-truth label; the mapping and all four accuracies are
    recomputed. Returns (mean, std) per metric over the repeats.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    rng = np.random.default_rng(seed)
    choices = [sorted(s) for s in multilabels.sets]
    results: dict[str, list[float]] = {}
    for _ in range(repeats):
        sampled = np.array([c[rng.integers(len(c))] for c in choices], dtype=np.int64)
        drawn = MultiLabelSets(sets=multilabels.sets, primary=sampled, n_classes=multilabels.n_classes)
        fam = accuracy_family(pred, drawn)
        for key, value in fam.items():
            results.setdefault(key, []).append(value)
    return {
        key: (float(np.mean(vals)), float(np.std(vals))) for key, vals in results.items()
    }


# ---------------------------------------------------------------------------
# NMI
# ---------------------------------------------------------------------------

def nmi(pred: np.ndarray, gt: np.ndarray) -> float:
    """Normalized mutual information with arithmetic-mean normalization.

    Two single-cluster partitions are defined as perfectly aligned (1.0).
    """
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape[0] != gt.shape[0]:
        raise LengthMismatch("pred and gt lengths differ")
    if pred.shape[0] == 0:
        raise EmptyInput("empty partitions")
    _, pi = np.unique(pred, return_inverse=True)
    _, gi = np.unique(gt, return_inverse=True)
    n = pred.shape[0]
    counts = contingency_matrix(pi, gi, pi.max() + 1, gi.max() + 1).astype(np.float64)
    pij = counts / n
    pi_m = pij.sum(axis=1)
    pj_m = pij.sum(axis=0)
    nz = pij > 0
    outer = np.outer(pi_m, pj_m)
    info = float(np.sum(pij[nz] * np.log(pij[nz] / outer[nz])))
    h_p = float(-np.sum(pi_m[pi_m > 0] * np.log(pi_m[pi_m > 0])))
    h_g = float(-np.sum(pj_m[pj_m > 0] * np.log(pj_m[pj_m > 0])))
    denom = 0.5 * (h_p + h_g)
    if denom == 0.0:
        return 1.0
    return max(0.0, info / denom)


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationBins:
    """Equal-width reliability bins over (0, 1]."""

    n_bins: int
    counts: np.ndarray
    mean_confidence: np.ndarray
    accuracy: np.ndarray

    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_bins + 1)

    def rows(self) -> list[dict]:
        e = self.edges()
        return [
            {
                "lo": float(e[b]),
                "hi": float(e[b + 1]),
                "count": int(self.counts[b]),
                "mean_confidence": float(self.mean_confidence[b]),
                "accuracy": float(self.accuracy[b]),
            }
            for b in range(self.n_bins)
        ]


def ece(
    confidences: np.ndarray, correct: np.ndarray, n_bins: int = 15
) -> tuple[float, CalibrationBins]:
    """Expected calibration error: bin-weighted |accuracy - confidence| gap."""
    confidences = np.asarray(confidences, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    if confidences.size == 0:
        raise EmptyInput("no confidences")
    if confidences.shape[0] != correct.shape[0]:
        raise LengthMismatch("confidences and correctness lengths differ")
    if confidences.min() <= 0.0 or confidences.max() > 1.0:
        raise ValueError("confidences must lie in (0, 1]")
    # Bin b covers (b/n, (b+1)/n]; ceil places each confidence in its bin.
    idx = np.ceil(confidences * n_bins).astype(np.int64) - 1
    counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    conf_sum = np.bincount(idx, weights=confidences, minlength=n_bins)
    acc_sum = np.bincount(idx, weights=correct.astype(np.float64), minlength=n_bins)
    with np.errstate(invalid="ignore"):
        mean_conf = np.where(counts > 0, conf_sum / np.maximum(counts, 1), 0.0)
        acc = np.where(counts > 0, acc_sum / np.maximum(counts, 1), 0.0)
    n = confidences.shape[0]
    value = float(np.sum(counts / n * np.abs(acc - mean_conf)))
    return value, CalibrationBins(n_bins=n_bins, counts=counts, mean_confidence=mean_conf, accuracy=acc)


# ---------------------------------------------------------------------------
# Cluster validity
# ---------------------------------------------------------------------------

def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def silhouette_score(
    features: np.ndarray, groups: np.ndarray, sample_cap: int = 50_000, seed: int = 0
) -> float:
    """Mean silhouette with Euclidean distances; singleton members score 0.

    Full pairwise distances are used up to ``sample_cap`` rows; larger inputs
    are evaluated on a seeded uniform subsample of that size.
    """
    x = np.asarray(features, dtype=np.float64)
    groups = np.asarray(groups, dtype=np.int64)
    if np.unique(groups).size < 2:
        raise SingleCluster("silhouette requires >= 2 groups")
    if x.shape[0] > sample_cap:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(x.shape[0], size=sample_cap, replace=False))
        x, groups = x[idx], groups[idx]
        if np.unique(groups).size < 2:
            raise SingleCluster("subsample collapsed to a single group")
    _, gi = np.unique(groups, return_inverse=True)
    k = gi.max() + 1
    n = x.shape[0]
    dists = np.sqrt(_pairwise_sq_dists(x))
    onehot = np.zeros((n, k))
    onehot[np.arange(n), gi] = 1.0
    sums = dists @ onehot                      # (n, k): total distance to each group
    sizes = onehot.sum(axis=0)
    own = sums[np.arange(n), gi]
    own_size = sizes[gi]
    scores = np.zeros(n)
    non_single = own_size > 1
    a = np.where(non_single, own / np.maximum(own_size - 1, 1), 0.0)
    mean_other = sums / sizes[None, :]
    mean_other[np.arange(n), gi] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(invalid="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    scores[non_single] = s[non_single]
    return float(scores.mean())


def davies_bouldin(features: np.ndarray, groups: np.ndarray) -> float:
    """Standard Davies-Bouldin index with group means as centroids (lower is better)."""
    x = np.asarray(features, dtype=np.float64)
    groups = np.asarray(groups, dtype=np.int64)
    uniq, gi = np.unique(groups, return_inverse=True)
    k = uniq.size
    if k < 2:
        raise SingleCluster("Davies-Bouldin requires >= 2 groups")
    centroids = np.zeros((k, x.shape[1]))
    spreads = np.zeros(k)
    for g in range(k):
        members = x[gi == g]
        centroids[g] = members.mean(axis=0)
        spreads[g] = np.mean(np.linalg.norm(members - centroids[g], axis=1))
    gaps = np.sqrt(_pairwise_sq_dists(centroids))
    with np.errstate(divide="ignore"):
        ratios = (spreads[:, None] + spreads[None, :]) / gaps
    np.fill_diagonal(ratios, -np.inf)
    return float(np.max(ratios, axis=1).mean())


def alignment_score(features: np.ndarray, pairs: np.ndarray) -> float:
    """Mean squared Euclidean distance over same-label neighbor pairs (lower is better)."""
    if pairs.shape[0] == 0:
        raise EmptyInput("no true-positive pairs")
    x = np.asarray(features, dtype=np.float64)
    diffs = x[pairs[:, 0]] - x[pairs[:, 1]]
    return float(np.mean(np.sum(diffs * diffs, axis=1)))


def validity_indices(
    features: FeatureMatrix | np.ndarray,
    groups: LabelVector | np.ndarray,
    neighbor_table=None,
    labels_for_alignment: LabelVector | None = None,
) -> dict[str, float]:
    """Silhouette, Davies-Bouldin, and (when a neighbor table is given) alignment."""
    x = features.values if isinstance(features, FeatureMatrix) else np.asarray(features)
    g = groups.labels if isinstance(groups, LabelVector) else np.asarray(groups)
    out = {
        "silhouette": silhouette_score(x, g),
        "davies_bouldin": davies_bouldin(x, g),
    }
    if neighbor_table is not None:
        from .neighbors import true_positive_pairs

        lab = labels_for_alignment
        if lab is None:
            lab = groups if isinstance(groups, LabelVector) else LabelVector(
                labels=g, n_classes=int(g.max()) + 1
            )
        pairs = true_positive_pairs(neighbor_table, lab)
        out["alignment"] = alignment_score(x, pairs)
    return out


# ---------------------------------------------------------------------------
# Report container
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    """Everything one evaluation produced, serializable to a stable JSON document."""

    benchmark: str
    method: str
    n_rows: int
    n_classes: int
    n_clusters: int
    metrics: dict[str, float]
    mapping: dict[int, int]
    protocol: dict = field(default_factory=dict)
    bins: list[dict] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "benchmark": self.benchmark,
            "method": self.method,
            "n_rows": self.n_rows,
            "n_classes": self.n_classes,
            "n_clusters": self.n_clusters,
            "metrics": {k: self.metrics[k] for k in sorted(self.metrics)},
            "mapping": {str(k): self.mapping[k] for k in sorted(self.mapping)},
            "protocol": self.protocol,
            "bins": self.bins,
            "notes": self.notes,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @staticmethod
    def from_json(text: str) -> "EvalReport":
        doc = json.loads(text)
        return EvalReport(
            benchmark=doc["benchmark"],
            method=doc["method"],
            n_rows=doc["n_rows"],
            n_classes=doc["n_classes"],
            n_clusters=doc["n_clusters"],
            metrics=doc["metrics"],
            mapping={int(k): v for k, v in doc["mapping"].items()},
            protocol=doc.get("protocol", {}),
            bins=doc.get("bins", []),
            notes=doc.get("notes", {}),
        )
