"""WordNet-style class hierarchy: coarsening, leaf extraction, ancestor/sibling queries.

Trees are loaded from a TSV edge list (``child_id<TAB>parent_id<TAB>name<TAB>lemma1|lemma2...``,
roots carry an empty parent field). Depth follows the coarse-first convention:
roots sit at depth 1 and every child one level below its parent. Multiple
roots are allowed and are treated as mutual siblings.

A node whose id is a nonnegative decimal integer doubles as a dataset class
id, which is how label vectors attach to the tree; operations that relabel
also accept an explicit class-id -> node-id table.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .feature_store import LabelVector

logger = logging.getLogger(__name__)


class TreeError(Exception):
    pass


class CycleDetected(TreeError):
    def __init__(self, node_id: str):
        super().__init__(f"cycle through node {node_id!r}")
        self.node_id = node_id


class DanglingParent(TreeError):
    pass


class DuplicateId(TreeError):
    pass


class UnknownClass(TreeError):
    pass


class UnmappedLabel(TreeError):
    pass


@dataclass
class ClassNode:
    id: str
    name: str
    lemmas: list[str]
    parent: str | None = None
    children: list[str] = field(default_factory=list)
    depth: int = 0


class SemanticTree:
    """Immutable-after-load forest of ClassNodes with depths precomputed."""

    def __init__(self, nodes: dict[str, ClassNode]):
        self.nodes = nodes
        self.roots = {nid for nid, n in nodes.items() if n.parent is None}
        self._compute_depths()
        self.class_of_node = {
            nid: int(nid) for nid in nodes if nid.isdigit()
        }

    def _compute_depths(self) -> None:
        order: list[str] = []
        stack = sorted(self.roots)
        seen: set[str] = set()
        for root in stack:
            self.nodes[root].depth = 1
        queue = list(sorted(self.roots))
        while queue:
            nid = queue.pop(0)
            if nid in seen:
                raise CycleDetected(nid)
            seen.add(nid)
            order.append(nid)
            node = self.nodes[nid]
            for child in node.children:
                self.nodes[child].depth = node.depth + 1
                queue.append(child)
        if len(seen) != len(self.nodes):
            missing = sorted(set(self.nodes) - seen)
            raise CycleDetected(missing[0])
        self.topo_order = order

    def node(self, node_id: str) -> ClassNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownClass(f"unknown class/node {node_id!r}") from None

    def depth(self, node_id: str) -> int:
        return self.node(node_id).depth

    def max_depth(self) -> int:
        return max(n.depth for n in self.nodes.values()) if self.nodes else 0

    def is_leaf(self, node_id: str) -> bool:
        return not self.node(node_id).children

    def children(self, node_id: str) -> list[str]:
        return list(self.node(node_id).children)


def load_tree(path: str | Path) -> SemanticTree:
    """Parse the TSV edge list into a validated forest.

    A child id listed more than once with an identical name keeps its
    first-listed parent (extra hypernym paths are dropped and logged, since
    the hierarchy is treated as a tree); a re-listing with a different name
    is a genuine conflict and raises DuplicateId.
    """
    nodes: dict[str, ClassNode] = {}
    extra_edges = 0
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < 3:
            raise TreeError(f"line {lineno}: expected at least 3 tab-separated fields")
        child, parent, name = parts[0], parts[1], parts[2]
        lemmas = parts[3].split("|") if len(parts) > 3 and parts[3] else [name]
        parent_id = parent if parent else None
        if child in nodes:
            if nodes[child].name != name:
                raise DuplicateId(f"node {child!r} redefined with a different name")
            extra_edges += 1
            logger.info("dropping extra hypernym edge %s -> %s (keeping first parent)", child, parent)
            continue
        nodes[child] = ClassNode(id=child, name=name, lemmas=lemmas, parent=parent_id)
    for node in nodes.values():
        if node.parent is not None:
            if node.parent not in nodes:
                raise DanglingParent(f"node {node.id!r} references missing parent {node.parent!r}")
            nodes[node.parent].children.append(node.id)
    if extra_edges:
        logger.info("dropped %d extra hypernym edges in total", extra_edges)
    return SemanticTree(nodes)


def save_tree(path: str | Path, tree: SemanticTree) -> None:
    lines = []
    for nid in sorted(tree.nodes):
        node = tree.nodes[nid]
        lines.append(
            "\t".join([node.id, node.parent or "", node.name, "|".join(node.lemmas)])
        )
    Path(path).write_text("\n".join(lines) + "\n")


def ancestor_set(tree: SemanticTree, class_id: str, include_self: bool = False) -> list[str]:
    """Ancestors ordered parent-first up to the root (self prepended on request)."""
    node = tree.node(class_id)
    out = [class_id] if include_self else []
    cur = node.parent
    guard = 0
    while cur is not None:
        out.append(cur)
        cur = tree.node(cur).parent
        guard += 1
        if guard > len(tree.nodes):
            raise CycleDetected(class_id)
    return out


def descendants(tree: SemanticTree, node_id: str) -> set[str]:
    out: set[str] = set()
    stack = list(tree.node(node_id).children)
    while stack:
        nid = stack.pop()
        out.add(nid)
        stack.extend(tree.nodes[nid].children)
    return out


def leaf_classes(tree: SemanticTree, universe: Iterable[str] | None = None) -> set[str]:
    """Classes with no semantic descendant inside the evaluation scope.

    With the full universe this is the plain leaf set; restricting the
    universe to a dataset's own classes turns internal nodes whose
    descendants all fall outside the dataset into leaves.
    """
    if universe is None:
        uni = set(tree.nodes)
    else:
        uni = set(universe)
        unknown = uni - set(tree.nodes)
        if unknown:
            raise UnknownClass(f"universe contains unknown ids {sorted(unknown)[:3]}")
    leaves = set()
    for nid in uni:
        if not (descendants(tree, nid) & uni):
            leaves.add(nid)
    return leaves


def siblings(tree: SemanticTree, class_id: str) -> set[str]:
    """Classes sharing the node's parent, excluding itself; roots are mutual siblings."""
    node = tree.node(class_id)
    if node.parent is None:
        return set(tree.roots) - {class_id}
    return set(tree.nodes[node.parent].children) - {class_id}


def same_depth_classes(tree: SemanticTree, class_id: str) -> set[str]:
    """All other nodes on the same hierarchy level (the fallback when siblings are empty)."""
    d = tree.depth(class_id)
    return {nid for nid, n in tree.nodes.items() if n.depth == d} - {class_id}


def ancestor_at_depth(tree: SemanticTree, node_id: str, max_depth: int) -> str:
    """The unique ancestor at ``max_depth`` (identity for shallower nodes)."""
    node = tree.node(node_id)
    if node.depth <= max_depth:
        return node_id
    cur = node
    while cur.depth > max_depth:
        cur = tree.node(cur.parent)  # depth > 1 implies a parent exists
    return cur.id


@dataclass(frozen=True)
class CoarsenResult:
    labels: LabelVector
    remap: dict[int, int]          # old class id -> new class id
    class_nodes: tuple[str, ...]   # node id per new class id


def coarsen(
    tree: SemanticTree,
    labels: LabelVector,
    max_depth: int,
    class_nodes: Sequence[str] | None = None,
) -> CoarsenResult:
    """Replace every label deeper than ``max_depth`` by its ancestor at that depth.

    Shallower classes stay intact and no row is dropped. The surviving node
    set is densely re-indexed; new ids are assigned by ascending smallest old
    class id, so a no-op coarsening keeps ids unchanged.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    if class_nodes is None:
        class_nodes = [str(c) for c in range(labels.n_classes)]
    if len(class_nodes) != labels.n_classes:
        raise ValueError("class_nodes length must equal n_classes")
    targets: list[str] = []
    for c, nid in enumerate(class_nodes):
        if nid not in tree.nodes:
            raise UnmappedLabel(f"class {c} maps to unknown node {nid!r}")
        targets.append(ancestor_at_depth(tree, nid, max_depth))
    new_id_of_node: dict[str, int] = {}
    old_to_new: dict[int, int] = {}
    for c, node in enumerate(targets):
        if node not in new_id_of_node:
            new_id_of_node[node] = len(new_id_of_node)
        old_to_new[c] = new_id_of_node[node]
    lut = np.array([old_to_new[c] for c in range(labels.n_classes)], dtype=np.int64)
    new_labels = LabelVector(labels=lut[labels.labels], n_classes=len(new_id_of_node))
    nodes_by_new = tuple(sorted(new_id_of_node, key=new_id_of_node.get))
    return CoarsenResult(labels=new_labels, remap=old_to_new, class_nodes=nodes_by_new)


def write_coarsen_remap(path: str | Path, result: CoarsenResult) -> None:
    # Two-column CSV: old class id, new class id.
    lines = ["old_class,new_class"]
    for old in sorted(result.remap):
        lines.append(f"{old},{result.remap[old]}")
    Path(path).write_text("\n".join(lines) + "\n")
