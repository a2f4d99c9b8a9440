"""Deterministic synthetic fixtures: unit-norm Gaussian blobs with optional
semantic tree, idealized image-term similarities, and co-label sets.

Blob centers are drawn orthonormal when the dimension allows, and the
per-blob spread is set so that the smallest center-to-center distance equals
``separation`` standard deviations. That makes "well separated" and
"moderately overlapping" fixtures a single knob.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import feature_store as fs
from .semantic_tree import ClassNode, SemanticTree, save_tree


@dataclass
class SynthSpec:
    name: str
    blobs: int
    per_blob: int
    dim: int
    separation: float = 10.0
    imbalance: str = "balanced"        # "balanced" | "geometric"
    imbalance_ratio: float = 0.5       # per-rank count multiplier for "geometric"
    tree_shape: str | None = None      # None | "flat" | "chain-<k>" | "grouped-<g>"
    similarity_noise: float | None = None
    val_fraction: float = 0.2
    seed: int = 0


def _blob_centers(rng: np.random.Generator, blobs: int, dim: int) -> np.ndarray:
    raw = rng.normal(size=(blobs, dim))
    if blobs <= dim:
        q, _ = np.linalg.qr(raw.T)
        centers = q.T[:blobs]
    else:
        centers = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    return centers


def _class_counts(spec: SynthSpec) -> np.ndarray:
    if spec.imbalance == "balanced":
        return np.full(spec.blobs, spec.per_blob, dtype=np.int64)
    if spec.imbalance == "geometric":
        counts = [max(1, round(spec.per_blob * spec.imbalance_ratio**c)) for c in range(spec.blobs)]
        return np.array(counts, dtype=np.int64)
    raise ValueError(f"unknown imbalance profile {spec.imbalance!r}")


def _build_tree(spec: SynthSpec) -> tuple[SemanticTree, dict[str, list[int]], dict[int, str]]:
    """Tree over class nodes plus a term registry (two lemmas per class node)."""
    c = spec.blobs
    nodes: dict[str, ClassNode] = {}
    shape = spec.tree_shape
    if shape == "flat":
        nodes["r"] = ClassNode(id="r", name="root", lemmas=["root"])
        parents = {str(cls): "r" for cls in range(c)}
    elif shape.startswith("chain-"):
        levels = int(shape.split("-", 1)[1])
        if levels < 2:
            raise ValueError("chain trees need at least 2 levels")
        chain = [f"r{i}" for i in range(levels - 1)]
        for i, nid in enumerate(chain):
            nodes[nid] = ClassNode(
                id=nid, name=f"level{i + 1}", lemmas=[f"level{i + 1}"],
                parent=chain[i - 1] if i else None,
            )
        parents = {str(cls): chain[-1] for cls in range(c)}
    elif shape.startswith("grouped-"):
        levels = int(shape.split("-", 1)[1])
        if levels != 3:
            raise ValueError("grouped trees are built with 3 levels")
        n_groups = max(2, round(math.sqrt(c)))
        group_size = math.ceil(c / n_groups)
        nodes["r"] = ClassNode(id="r", name="root", lemmas=["root"])
        parents = {}
        for cls in range(c):
            gid = f"g{cls // group_size}"
            if gid not in nodes:
                nodes[gid] = ClassNode(id=gid, name=gid, lemmas=[gid], parent="r")
            parents[str(cls)] = gid
    else:
        raise ValueError(f"unknown tree shape {shape!r}")
    for cls in range(c):
        nid = str(cls)
        nodes[nid] = ClassNode(
            id=nid, name=f"class{cls}", lemmas=[f"class{cls}", f"obj{cls}"],
            parent=parents[nid],
        )
    for node in nodes.values():
        if node.parent is not None:
            nodes[node.parent].children.append(node.id)
    tree = SemanticTree(nodes)
    registry: dict[int, str] = {}
    node_terms: dict[str, list[int]] = {}
    for nid in sorted(nodes, key=lambda s: (0, int(s)) if s.isdigit() else (1, s)):
        ids = []
        for lemma in nodes[nid].lemmas:
            ids.append(len(registry))
            registry[len(registry)] = lemma
        node_terms[nid] = ids
    return tree, node_terms, registry


def _node_directions(
    tree: SemanticTree, centers: np.ndarray
) -> dict[str, np.ndarray]:
    """Unit direction per node: class nodes use their blob center, internal
    nodes the normalized mean of their descendant class centers."""
    directions: dict[str, np.ndarray] = {}
    for nid in sorted(tree.nodes, key=lambda s: -tree.nodes[s].depth):
        node = tree.nodes[nid]
        if nid.isdigit():
            directions[nid] = centers[int(nid)]
        else:
            clss = [int(d) for d in _class_descendants(tree, nid)]
            mean = centers[clss].mean(axis=0)
            directions[nid] = mean / np.linalg.norm(mean)
    return directions


def _class_descendants(tree: SemanticTree, nid: str) -> list[str]:
    out = []
    stack = list(tree.nodes[nid].children)
    while stack:
        cur = stack.pop()
        if cur.isdigit():
            out.append(cur)
        stack.extend(tree.nodes[cur].children)
    return out


def synth_fixture(out_dir: str | Path, spec: SynthSpec) -> dict[str, Path]:
    """Materialize the fixture under ``out_dir/<name>/`` and return manifest paths."""
    rng = np.random.default_rng(spec.seed)
    centers = _blob_centers(rng, spec.blobs, spec.dim)
    gaps = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
    np.fill_diagonal(gaps, np.inf)
    sigma = float(gaps.min()) / spec.separation
    counts = _class_counts(spec)

    rows = []
    labels = []
    for cls in range(spec.blobs):
        pts = centers[cls] + sigma * rng.normal(size=(counts[cls], spec.dim))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        rows.append(pts)
        labels.append(np.full(counts[cls], cls, dtype=np.int64))
    x = np.concatenate(rows).astype(np.float32)
    y = np.concatenate(labels)

    # Stratified train/val split, deterministic under the seed.
    val_mask = np.zeros(y.shape[0], dtype=bool)
    for cls in range(spec.blobs):
        idx = np.flatnonzero(y == cls)
        n_val = max(1, round(spec.val_fraction * idx.size)) if idx.size > 1 else 0
        val_mask[rng.choice(idx, size=n_val, replace=False)] = True

    base = Path(out_dir) / spec.name
    base.mkdir(parents=True, exist_ok=True)

    tree = node_terms = registry = None
    if spec.tree_shape:
        tree, node_terms, registry = _build_tree(spec)
        save_tree(base / "tree.tsv", tree)
        fs.write_term_registry(base / "terms.tsv", registry)
        (base / "node_terms.json").write_text(
            json.dumps(node_terms, indent=2, sort_keys=True) + "\n"
        )

    manifests = {}
    for split, mask in (("train", ~val_mask), ("val", val_mask)):
        split_dir = base / split
        split_dir.mkdir(exist_ok=True)
        xs, ys = x[mask], y[mask]
        fs.write_features(split_dir / "features.fbcf", xs)
        fs.write_labels(split_dir / "labels.fbcf", ys)
        paths = {"features": "features.fbcf", "labels": "labels.fbcf"}
        if spec.tree_shape:
            paths["tree"] = "../tree.tsv"
            paths["terms"] = "../terms.tsv"
            paths["node_terms"] = "../node_terms.json"
            if spec.tree_shape.startswith("grouped-"):
                sets = _group_colabels(tree, ys)
                fs.write_multilabels(split_dir / "multilabels.txt", sets)
                paths["multilabels"] = "multilabels.txt"
        if spec.similarity_noise is not None:
            directions = _node_directions(tree, centers)
            sims = _similarities(rng, xs, tree, directions, node_terms,
                                 len(registry), spec.similarity_noise)
            fs.write_array(split_dir / "similarity.fbcf", sims)
            paths["similarity"] = "similarity.fbcf"
        manifest = fs.DatasetManifest(name=spec.name, split=split, paths=paths)
        fs.write_manifest(split_dir / "manifest.json", manifest)
        manifests[split] = split_dir / "manifest.json"
    return manifests


def _group_colabels(tree: SemanticTree, y: np.ndarray) -> fs.MultiLabelSets:
    """Label sets = the class plus its tree siblings (classes under one parent)."""
    n_classes = int(y.max()) + 1
    group_of = {}
    for cls in range(n_classes):
        group_of[cls] = tree.nodes[str(cls)].parent
    members: dict[str, set[int]] = {}
    for cls, gid in group_of.items():
        members.setdefault(gid, set()).add(cls)
    sets = tuple(frozenset(members[group_of[int(cls)]]) for cls in y)
    return fs.MultiLabelSets(sets=sets, primary=y.copy(), n_classes=n_classes)


def _similarities(
    rng: np.random.Generator,
    xs: np.ndarray,
    tree: SemanticTree,
    directions: dict[str, np.ndarray],
    node_terms: dict[str, list[int]],
    n_terms: int,
    noise: float,
) -> np.ndarray:
    sims = np.zeros((xs.shape[0], n_terms), dtype=np.float64)
    for nid, terms in node_terms.items():
        base = xs.astype(np.float64) @ directions[nid]
        for t in terms:
            sims[:, t] = base + noise * rng.normal(size=xs.shape[0])
    return sims.astype(np.float32)
