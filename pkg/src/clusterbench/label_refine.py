"""Zero-shot classification over precomputed similarities and hierarchical relabeling.

No vision-language model runs here: every decision is an argmax over stored
image-term similarity scores. A class scores as the maximum over its term
columns (after lemma voting pins one canonical term per class, that single
column is used). Rows are independent, so everything vectorizes per class.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .feature_store import LabelVector, SimilarityMatrix
from .metrics import ece as compute_ece
from .semantic_tree import SemanticTree, UnmappedLabel, same_depth_classes, siblings

DEPTH_BUDGET = 64
DEFAULT_TEMPERATURE = 0.01  # cosine-range similarities need a sharp softmax


class RefineError(Exception):
    pass


class UnknownTerm(RefineError):
    pass


class DepthBudgetExceeded(RefineError):
    pass


def _id_key(class_id: Hashable):
    # Numeric ids order numerically so "lowest id" matches the int convention.
    s = str(class_id)
    return (0, int(s), "") if s.isdigit() else (1, 0, s)


def _class_scores(
    sim: SimilarityMatrix,
    rows: np.ndarray | slice,
    candidates: Sequence[Hashable],
    class_to_terms: Mapping[Hashable, Sequence[int]],
) -> np.ndarray:
    """Score matrix (n_rows, n_candidates): max over each candidate's term columns."""
    values = sim.values[rows]
    cols = []
    for cand in candidates:
        terms = list(class_to_terms.get(cand, ()))
        if not terms:
            raise UnknownTerm(f"candidate {cand!r} resolves to no term column")
        for t in terms:
            if not (0 <= t < sim.n_terms):
                raise UnknownTerm(f"candidate {cand!r}: term id {t} out of range")
        cols.append(values[:, terms].max(axis=1))
    return np.stack(cols, axis=1)


def _softmax_rows(scores: np.ndarray, temperature: float) -> np.ndarray:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = scores / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def zero_shot(
    sim: SimilarityMatrix,
    candidates: Iterable[Hashable],
    class_to_terms: Mapping[Hashable, Sequence[int]],
    temperature: float = DEFAULT_TEMPERATURE,
    rows: np.ndarray | slice = slice(None),
) -> tuple[list, np.ndarray, tuple]:
    """Per-row argmax class and softmax confidences over the candidate set.

    Returns (predictions, confidence matrix, candidate order); candidates are
    ordered ascending by id and ties go to the first (lowest) one.
    """
    ordered = tuple(sorted(set(candidates), key=_id_key))
    if not ordered:
        raise ValueError("empty candidate set")
    scores = _class_scores(sim, rows, ordered, class_to_terms)
    conf = _softmax_rows(scores, temperature)
    winners = np.argmax(scores, axis=1)  # first max = lowest candidate id
    preds = [ordered[w] for w in winners]
    return preds, conf, ordered


def lemma_vote(
    sim: SimilarityMatrix, rows_of_class: np.ndarray, lemmas: Sequence[int]
) -> int:
    """Majority vote across a class's rows for its best-matching lemma column.

    Per row the highest-similarity lemma wins (ties to the lower term id);
    the modal lemma over rows is returned, again lowest id on ties.
    """
    rows_of_class = np.asarray(rows_of_class)
    if rows_of_class.size == 0:
        raise ValueError("rows_of_class must be non-empty")
    lemmas = sorted(int(t) for t in lemmas)
    for t in lemmas:
        if not (0 <= t < sim.n_terms):
            raise UnknownTerm(f"term id {t} out of range")
    scores = sim.values[rows_of_class][:, lemmas]
    votes = np.argmax(scores, axis=1)
    tally = Counter(lemmas[v] for v in votes)
    best = max(tally.items(), key=lambda kv: (kv[1], -kv[0]))
    return best[0]


def canonical_terms(
    sim: SimilarityMatrix,
    labels: LabelVector,
    class_to_terms: Mapping[Hashable, Sequence[int]],
    class_nodes: Sequence[Hashable] | None = None,
) -> dict[Hashable, list[int]]:
    """Pin one canonical term per class by lemma voting over that class's rows.

    Classes with no rows (or a single lemma) keep their lowest term id.
    """
    if class_nodes is None:
        class_nodes = [c for c in range(labels.n_classes)]
    pinned: dict[Hashable, list[int]] = {}
    for cls, node in enumerate(class_nodes):
        terms = sorted(int(t) for t in class_to_terms[node])
        rows = np.flatnonzero(labels.labels == cls)
        if rows.size == 0 or len(terms) == 1:
            pinned[node] = [terms[0]]
        else:
            pinned[node] = [lemma_vote(sim, rows, terms)]
    return pinned


# ---------------------------------------------------------------------------
# Hierarchical zero-shot relabeling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RefinementTrace:
    """One row's relabeling path down the tree."""

    row: int
    original: str
    steps: tuple  # (candidate ids, chosen id, softmax confidences) per recursion
    final: str
    stopped_by: str  # "leaf_reached" | "parent_retained"


@dataclass
class RefineResult:
    labels: LabelVector
    class_nodes: tuple[str, ...]     # node id per dense class id
    traces: list[RefinementTrace]
    n_refined: int

    @property
    def refined_fraction(self) -> float:
        return self.n_refined / max(self.labels.n_rows, 1)


def _densify(final_nodes: list[str]) -> tuple[LabelVector, tuple[str, ...]]:
    ordered = tuple(sorted(set(final_nodes), key=_id_key))
    index = {node: i for i, node in enumerate(ordered)}
    dense = np.array([index[n] for n in final_nodes], dtype=np.int64)
    return LabelVector(labels=dense, n_classes=len(ordered)), ordered


def hzr(
    tree: SemanticTree,
    sim: SimilarityMatrix,
    labels: LabelVector,
    mode: str = "parent",
    class_nodes: Sequence[str] | None = None,
    node_to_terms: Mapping[str, Sequence[int]] | None = None,
    temperature: float = DEFAULT_TEMPERATURE,
) -> RefineResult:
    """Recursively push each row's label toward the leaves by similarity argmax.

    ``leaf`` mode classifies among the current node's children until a leaf
    is reached; ``parent`` mode adds the current node to the candidates and
    stops early when it wins, so a row may legitimately keep a non-leaf
    label. Rows that already carry leaf labels pass through unchanged.
    """
    if mode not in ("leaf", "parent"):
        raise ValueError(f"unknown mode {mode!r}")
    if class_nodes is None:
        class_nodes = [str(c) for c in range(labels.n_classes)]
    if node_to_terms is None:
        raise ValueError("node_to_terms mapping is required")
    for cls, node in enumerate(class_nodes):
        if node not in tree.nodes:
            raise UnmappedLabel(f"class {cls} maps to unknown node {node!r}")

    final_nodes: list[str] = [""] * labels.n_rows
    traces: list[RefinementTrace] = []
    n_refined = 0
    # Rows of the same class share the whole candidate schedule, but the
    # similarity argmax is per row, so recursion state stays per row.
    for row in range(labels.n_rows):
        node = class_nodes[labels.labels[row]]
        original = node
        steps = []
        stopped_by = "leaf_reached"
        while tree.nodes[node].children:
            if len(steps) >= DEPTH_BUDGET:
                raise DepthBudgetExceeded(f"row {row}: exceeded {DEPTH_BUDGET} steps")
            candidates = list(tree.nodes[node].children)
            if mode == "parent":
                candidates.append(node)
            preds, conf, ordered = zero_shot(
                sim, candidates, node_to_terms, temperature, rows=np.array([row])
            )
            chosen = preds[0]
            steps.append((ordered, chosen, tuple(float(v) for v in conf[0])))
            if mode == "parent" and chosen == node:
                stopped_by = "parent_retained"
                break
            node = chosen
        final_nodes[row] = node
        if node != original:
            n_refined += 1
        traces.append(
            RefinementTrace(
                row=row, original=original, steps=tuple(steps), final=node,
                stopped_by=stopped_by,
            )
        )
    dense, ordered = _densify(final_nodes)
    return RefineResult(labels=dense, class_nodes=ordered, traces=traces, n_refined=n_refined)


def intersect_refined(
    a: RefineResult, b: RefineResult
) -> tuple[RefineResult, RefineResult, list[int], list[int]]:
    """Restrict two refined splits to their common class set.

    Rows whose refined class survives in only one split are dropped (and
    reported), mirroring how a relabeled training split must stay consistent
    with its validation split.
    """
    common = sorted(set(a.class_nodes) & set(b.class_nodes), key=_id_key)
    index = {node: i for i, node in enumerate(common)}
    out = []
    dropped_lists = []
    for res in (a, b):
        nodes = [res.class_nodes[cls] for cls in res.labels.labels]
        keep = [i for i, n in enumerate(nodes) if n in index]
        dropped = [i for i, n in enumerate(nodes) if n not in index]
        dense = np.array([index[nodes[i]] for i in keep], dtype=np.int64)
        out.append(
            RefineResult(
                labels=LabelVector(labels=dense, n_classes=len(common)),
                class_nodes=tuple(common),
                traces=[res.traces[i] for i in keep],
                n_refined=res.n_refined,
            )
        )
        dropped_lists.append(dropped)
    return out[0], out[1], dropped_lists[0], dropped_lists[1]


def write_traces(path: str | Path, result: RefineResult) -> None:
    """Trace report as JSON lines, one record per refined row."""
    with open(path, "w") as fh:
        for tr in result.traces:
            if not tr.steps:
                continue
            fh.write(json.dumps({
                "row": tr.row,
                "original": tr.original,
                "final": tr.final,
                "stopped_by": tr.stopped_by,
                "steps": [
                    {"candidates": list(cands), "chosen": chosen, "confidences": list(conf)}
                    for cands, chosen, conf in tr.steps
                ],
            }, sort_keys=True) + "\n")


def refine_summary_csv(
    before_classes: int, result: RefineResult, dropped_rows: int = 0
) -> str:
    lines = ["classes_before,classes_after,rows,rows_refined,refined_fraction,rows_dropped"]
    lines.append(
        f"{before_classes},{len(result.class_nodes)},{result.labels.n_rows},"
        f"{result.n_refined},{result.refined_fraction!r},{dropped_rows}"
    )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Restricted-candidate calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationSummary:
    accuracy: float
    ece: float
    mean_confidence: float
    restriction: str


def restricted_calibration(
    sim: SimilarityMatrix,
    tree: SemanticTree,
    labels: LabelVector,
    restriction: str = "all",
    class_nodes: Sequence[str] | None = None,
    node_to_terms: Mapping[str, Sequence[int]] | None = None,
    temperature: float = DEFAULT_TEMPERATURE,
    n_bins: int = 15,
) -> CalibrationSummary:
    """Zero-shot accuracy/calibration under candidate sets restricted by the tree.

    ``all`` classifies against every dataset class, ``same_hierarchy``
    against the classes on the ground-truth label's depth, and ``siblings``
    against the label's tree siblings (falling back to the hierarchy level
    when a label has no sibling inside the dataset). The ground-truth class
    always stays in its own candidate set.
    """
    if restriction not in ("all", "same_hierarchy", "siblings"):
        raise ValueError(f"unknown restriction {restriction!r}")
    if class_nodes is None:
        class_nodes = [str(c) for c in range(labels.n_classes)]
    if node_to_terms is None:
        raise ValueError("node_to_terms mapping is required")
    universe = set(class_nodes)
    node_of_class = list(class_nodes)

    def candidate_set(gt_node: str) -> tuple[str, ...]:
        if restriction == "all":
            return tuple(sorted(universe, key=_id_key))
        if restriction == "same_hierarchy":
            cands = (same_depth_classes(tree, gt_node) & universe) | {gt_node}
            return tuple(sorted(cands, key=_id_key))
        sibs = siblings(tree, gt_node) & universe
        if not sibs:
            cands = (same_depth_classes(tree, gt_node) & universe) | {gt_node}
        else:
            cands = sibs | {gt_node}
        return tuple(sorted(cands, key=_id_key))

    correct = np.zeros(labels.n_rows, dtype=bool)
    confidence = np.zeros(labels.n_rows)
    for cls in range(labels.n_classes):
        rows = np.flatnonzero(labels.labels == cls)
        if rows.size == 0:
            continue
        gt_node = node_of_class[cls]
        cands = candidate_set(gt_node)
        preds, conf, _ = zero_shot(sim, cands, node_to_terms, temperature, rows=rows)
        correct[rows] = np.array([p == gt_node for p in preds])
        confidence[rows] = conf.max(axis=1)
    ece_value, _ = compute_ece(confidence, correct, n_bins=n_bins)
    return CalibrationSummary(
        accuracy=float(correct.mean()),
        ece=ece_value,
        mean_confidence=float(confidence.mean()),
        restriction=restriction,
    )
