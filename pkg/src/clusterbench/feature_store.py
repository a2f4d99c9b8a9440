"""Binary feature store: dense matrices, label vectors, multi-label sets, manifests.

The on-disk format (``FBCF``) is a small header followed by a row-major
payload, chosen so matrices can be memory-mapped and round-trip bit-exactly:

    magic   4 bytes  b"FBCF"
    version u8       1
    dtype   u8       1 = float32, 2 = uint32
    n_cols  u32      feature dimension (little endian)
    n_rows  u64      row count (little endian)

Everything loaded here is immutable after construction and safe to share
across threads.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"FBCF"
VERSION = 1
DTYPE_F32 = 1
DTYPE_U32 = 2

_HEADER = struct.Struct("<4sBBIQ")
HEADER_SIZE = _HEADER.size

_CODE_TO_DTYPE = {DTYPE_F32: np.dtype("<f4"), DTYPE_U32: np.dtype("<u4")}
_DTYPE_TO_CODE = {np.dtype("<f4"): DTYPE_F32, np.dtype("<u4"): DTYPE_U32}


class FeatureStoreError(Exception):
    """Base class for feature-store failures."""


class BadMagic(FeatureStoreError):
    pass


class TruncatedFile(FeatureStoreError):
    pass


class NonFiniteValue(FeatureStoreError):
    def __init__(self, row: int, col: int):
        super().__init__(f"non-finite value at row={row}, col={col}")
        self.row = row
        self.col = col


class ZeroNormRow(FeatureStoreError):
    def __init__(self, row: int):
        super().__init__(f"row {row} has zero norm; cannot normalize")
        self.row = row


class RowCountMismatch(FeatureStoreError):
    pass


class NegativeLabel(FeatureStoreError):
    pass


class EmptyResult(FeatureStoreError):
    pass


class ChecksumMismatch(FeatureStoreError):
    pass


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense float32 matrix of precomputed embeddings, one row per sample."""

    values: np.ndarray
    normalized: bool = False

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class LabelVector:
    """Integer class id per row, with the dense class count ``n_classes``.

    ``remap`` records old id -> dense id whenever the loader or an operation
    had to re-index the class universe; ``unused_ids`` notes in-range ids
    that currently have zero rows (kept as empty classes, not remapped away).
    """

    labels: np.ndarray
    n_classes: int
    remap: dict[int, int] | None = None
    unused_ids: tuple[int, ...] = ()

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", lab)
        if lab.size and (lab.min() < 0 or lab.max() >= self.n_classes):
            raise ValueError("labels outside [0, n_classes)")

    @property
    def n_rows(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class MultiLabelSets:
    """Per-row admissible label sets with a designated primary label."""

    sets: tuple[frozenset[int], ...]
    primary: np.ndarray
    n_classes: int

    def __post_init__(self):
        prim = np.ascontiguousarray(self.primary, dtype=np.int64)
        object.__setattr__(self, "primary", prim)
        if len(self.sets) != prim.shape[0]:
            raise ValueError("sets and primary lengths differ")
        for i, (s, p) in enumerate(zip(self.sets, prim)):
            if not s:
                raise ValueError(f"row {i}: empty label set")
            if int(p) not in s:
                raise ValueError(f"row {i}: primary {int(p)} not in its label set")
            for c in s:
                if not (0 <= c < self.n_classes):
                    raise ValueError(f"row {i}: label {c} outside [0, {self.n_classes})")

    @property
    def n_rows(self) -> int:
        return self.primary.shape[0]


@dataclass(frozen=True)
class SimilarityMatrix:
    """Image-by-term similarity scores plus the term id -> string registry."""

    values: np.ndarray
    term_registry: dict[int, str]

    def __post_init__(self):
        ids = sorted(self.term_registry)
        if ids != list(range(self.values.shape[1])):
            raise ValueError("term registry ids must be dense in [0, n_terms)")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_terms(self) -> int:
        return self.values.shape[1]


def _read_header(path: Path) -> tuple[int, int, int]:
    """Return (dtype_code, n_cols, n_rows) after validating magic/version/length."""
    size = path.stat().st_size
    if size < HEADER_SIZE:
        raise TruncatedFile(f"{path}: {size} bytes, smaller than header")
    with open(path, "rb") as fh:
        magic, version, dtype_code, n_cols, n_rows = _HEADER.unpack(fh.read(HEADER_SIZE))
    if magic != MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise BadMagic(f"{path}: unsupported version {version}")
    if dtype_code not in _CODE_TO_DTYPE:
        raise BadMagic(f"{path}: unknown dtype code {dtype_code}")
    expected = HEADER_SIZE + n_rows * n_cols * 4
    if size != expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, found {size}")
    return dtype_code, n_cols, n_rows


def read_array(path: str | Path, mmap: bool = False) -> np.ndarray:
    """Read a raw FBCF payload as a 2-D array (float32 or uint32)."""
    path = Path(path)
    dtype_code, n_cols, n_rows = _read_header(path)
    dt = _CODE_TO_DTYPE[dtype_code]
    if mmap:
        arr = np.memmap(path, dtype=dt, mode="r", offset=HEADER_SIZE, shape=(n_rows, n_cols))
        arr.flags.writeable = False
        return arr
    with open(path, "rb") as fh:
        fh.seek(HEADER_SIZE)
        arr = np.fromfile(fh, dtype=dt, count=n_rows * n_cols)
    return arr.reshape(n_rows, n_cols)


def write_array(path: str | Path, values: np.ndarray) -> None:
    """Write a 2-D float32/uint32 array in FBCF format (bit-exact round trip)."""
    values = np.ascontiguousarray(values)
    if values.ndim != 2:
        raise ValueError("FBCF payload must be 2-D")
    dt = np.dtype("<f4") if values.dtype.kind == "f" else np.dtype("<u4")
    code = _DTYPE_TO_CODE[dt]
    values = values.astype(dt, copy=False)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, code, values.shape[1], values.shape[0]))
        fh.write(values.tobytes())


def normalize_rows(values: np.ndarray) -> np.ndarray:
    """Scale every row to unit Euclidean norm; zero rows are a hard error."""
    norms = np.linalg.norm(values.astype(np.float64, copy=False), axis=1)
    zero = np.flatnonzero(norms < 1e-30)
    if zero.size:
        raise ZeroNormRow(int(zero[0]))
    out = values / norms[:, None].astype(values.dtype)
    return out.astype(np.float32, copy=False)


def load_features(path: str | Path, normalize: bool = False, mmap: bool = False) -> FeatureMatrix:
    """Load a float32 feature matrix, optionally row-L2-normalizing it.

    Normalization makes cosine similarity a plain dot product downstream.
    """
    arr = read_array(path, mmap=mmap and not normalize)
    if arr.dtype != np.dtype("<f4"):
        raise BadMagic(f"{path}: expected float32 payload, found {arr.dtype}")
    bad = ~np.isfinite(arr)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise NonFiniteValue(int(r), int(c))
    if normalize:
        arr = normalize_rows(np.asarray(arr))
    arr = np.asarray(arr)
    arr.flags.writeable = False
    return FeatureMatrix(values=arr, normalized=normalize)


def write_features(path: str | Path, matrix: FeatureMatrix | np.ndarray) -> None:
    values = matrix.values if isinstance(matrix, FeatureMatrix) else matrix
    write_array(path, np.asarray(values, dtype=np.float32))


def _labels_from_text(path: Path) -> np.ndarray:
    # Fallback ingest format: one decimal integer per line, LF-terminated.
    raw = path.read_text().split()
    return np.array([int(tok) for tok in raw], dtype=np.int64)


def load_labels(path: str | Path, n_rows_expected: int | None = None) -> LabelVector:
    """Load a label vector from FBCF u32 binary or the one-int-per-line text fallback.

    Ids that start above zero are treated as raw external identifiers and
    densely remapped (the old->new table is kept on the result); interior
    gaps in a zero-based id range are kept as empty classes and only noted,
    since a class may legitimately have no rows in a given split.
    """
    path = Path(path)
    try:
        arr = read_array(path)
        if arr.dtype != np.dtype("<u4"):
            raise BadMagic(f"{path}: expected uint32 label payload")
        labels = arr.reshape(-1).astype(np.int64)
    except BadMagic:
        labels = _labels_from_text(path)
    if n_rows_expected is not None and labels.shape[0] != n_rows_expected:
        raise RowCountMismatch(
            f"{path}: {labels.shape[0]} rows, expected {n_rows_expected}"
        )
    if labels.size == 0:
        return LabelVector(labels=labels, n_classes=0)
    if labels.min() < 0:
        raise NegativeLabel(f"{path}: negative label {int(labels.min())}")
    used = np.unique(labels)
    if used[0] > 0:
        remap = {int(old): new for new, old in enumerate(used.tolist())}
        dense = np.searchsorted(used, labels)
        return LabelVector(labels=dense, n_classes=len(used), remap=remap)
    n_classes = int(labels.max()) + 1
    unused = tuple(sorted(set(range(n_classes)) - set(used.tolist())))
    return LabelVector(labels=labels, n_classes=n_classes, unused_ids=unused)


def write_labels(path: str | Path, labels: LabelVector | np.ndarray) -> None:
    arr = labels.labels if isinstance(labels, LabelVector) else np.asarray(labels)
    write_array(path, arr.reshape(-1, 1).astype(np.uint32))


def subset(
    features: FeatureMatrix,
    labels: LabelVector,
    keep_classes: Iterable[int],
) -> tuple[FeatureMatrix, LabelVector]:
    """Retain rows whose label lies in ``keep_classes``, densely remapping ids.

    Row order is preserved; the old->new id table travels on the returned
    LabelVector.
    """
    keep = sorted(set(int(c) for c in keep_classes))
    if any(c < 0 or c >= labels.n_classes for c in keep):
        raise ValueError("keep_classes outside [0, n_classes)")
    if features.n_rows != labels.n_rows:
        raise RowCountMismatch("features and labels row counts differ")
    keep_arr = np.array(keep, dtype=np.int64)
    mask = np.isin(labels.labels, keep_arr)
    if not mask.any():
        raise EmptyResult("no rows survive the class filter")
    remap = {old: new for new, old in enumerate(keep)}
    new_labels = np.searchsorted(keep_arr, labels.labels[mask])
    sub_values = np.ascontiguousarray(features.values[mask])
    sub_values.flags.writeable = False
    return (
        FeatureMatrix(values=sub_values, normalized=features.normalized),
        LabelVector(labels=new_labels, n_classes=len(keep), remap=remap),
    )


def load_multilabels(path: str | Path, n_classes: int) -> MultiLabelSets:
    """Load per-row label sets: one line per row, comma-separated ids, first is primary."""
    sets: list[frozenset[int]] = []
    primary: list[int] = []
    for line in Path(path).read_text().splitlines():
        ids = [int(tok) for tok in line.split(",") if tok.strip() != ""]
        if not ids:
            raise ValueError(f"{path}: empty label set line")
        primary.append(ids[0])
        sets.append(frozenset(ids))
    return MultiLabelSets(sets=tuple(sets), primary=np.array(primary), n_classes=n_classes)


def write_multilabels(path: str | Path, multilabels: MultiLabelSets) -> None:
    lines = []
    for s, p in zip(multilabels.sets, multilabels.primary):
        rest = sorted(s - {int(p)})
        lines.append(",".join(str(c) for c in [int(p)] + rest))
    Path(path).write_text("\n".join(lines) + "\n")


def load_similarity(path: str | Path, registry_path: str | Path) -> SimilarityMatrix:
    """Load an image-by-term similarity matrix and its term registry (TSV id\\tstring)."""
    arr = np.asarray(read_array(path))
    if arr.dtype != np.dtype("<f4"):
        raise BadMagic(f"{path}: expected float32 similarity payload")
    bad = ~np.isfinite(arr)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise NonFiniteValue(int(r), int(c))
    registry: dict[int, str] = {}
    for line in Path(registry_path).read_text().splitlines():
        if not line.strip():
            continue
        tid, term = line.split("\t", 1)
        registry[int(tid)] = term
    arr.flags.writeable = False
    return SimilarityMatrix(values=arr, term_registry=registry)


def write_term_registry(path: str | Path, registry: dict[int, str]) -> None:
    lines = [f"{tid}\t{registry[tid]}" for tid in sorted(registry)]
    Path(path).write_text("\n".join(lines) + "\n")


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class DatasetManifest:
    """Names the files of one dataset split, with sha256 checksums."""

    name: str
    split: str
    paths: dict[str, str]
    checksums: dict[str, str] = field(default_factory=dict)

    def path(self, key: str, base: Path | None = None) -> Path:
        p = Path(self.paths[key])
        if base is not None and not p.is_absolute():
            p = base / p
        return p


def write_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    path = Path(path)
    base = path.parent
    checksums = {}
    for key, rel in manifest.paths.items():
        p = Path(rel)
        checksums[key] = sha256_file(p if p.is_absolute() else base / p)
    doc = {
        "name": manifest.name,
        "split": manifest.split,
        "paths": dict(sorted(manifest.paths.items())),
        "checksums": dict(sorted(checksums.items())),
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_manifest(path: str | Path, verify: bool = True) -> DatasetManifest:
    """Load a manifest, checking that every referenced file exists and matches its checksum."""
    path = Path(path)
    doc = json.loads(path.read_text())
    manifest = DatasetManifest(
        name=doc["name"], split=doc["split"], paths=doc["paths"], checksums=doc.get("checksums", {})
    )
    base = path.parent
    for key in manifest.paths:
        p = manifest.path(key, base)
        if not p.exists():
            raise FileNotFoundError(f"manifest {manifest.name}: missing file {p}")
        if verify and key in manifest.checksums:
            actual = sha256_file(p)
            if actual != manifest.checksums[key]:
                raise ChecksumMismatch(f"{p}: checksum mismatch")
    return manifest
