"""Dataset model: items, canonical pair keys, manifest and feature-file IO, splits.

The engine never touches pixels. Every item carries a precomputed base
feature vector (the output of whatever frozen encoder produced the archive),
a class label, and an optional image URI for display. Class labels exist
only for the simulated oracle and for retrieval evaluation; the metric model
trains exclusively on pair similarity labels.

File formats
------------
Manifest (JSON, one document)::

    {
      "version": 1,
      "num_classes": 21,
      "feature_file": "features.bin",        # path relative to the manifest
      "items": [
        {"id": "beach07", "class_label": 3,
         "split": "train",                    # optional; assigned later if absent
         "image_uri": "images/beach07.png"},  # optional
        ...
      ]
    }

Feature file (binary): a 16-byte header followed by the matrix.
Header layout, little-endian: 8-byte magic ``b"PAIRFEAT"``, uint32 row
count, uint32 dimension. Rows follow as float32, row-major, one row per
manifest item in manifest order. The file is memory-mappable.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

SPLITS = ("train", "val", "test")

FEATURE_MAGIC = b"PAIRFEAT"
_FEATURE_HEADER = struct.Struct("<8sII")


class DatasetError(ValueError):
    """Raised for malformed manifests, feature files, or dataset invariant violations."""


@dataclass(frozen=True, order=True)
class PairKey:
    """Canonical unordered pair of item ids: (a, b) and (b, a) map to one key."""

    lo: str
    hi: str

    def __post_init__(self) -> None:
        if self.lo == self.hi:
            raise DatasetError(f"pair members must differ, got {self.lo!r} twice")
        if self.lo > self.hi:
            lo, hi = self.hi, self.lo
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)

    def members(self) -> tuple[str, str]:
        return (self.lo, self.hi)

    def __str__(self) -> str:
        return f"{self.lo}|{self.hi}"

    @classmethod
    def parse(cls, text: str) -> "PairKey":
        lo, sep, hi = text.partition("|")
        if not sep:
            raise DatasetError(f"malformed pair key {text!r}, expected 'lo|hi'")
        return cls(lo, hi)


PROVENANCES = ("human", "simulated", "transitive", "seed")


@dataclass(frozen=True)
class LabeledPair:
    """A pair with a binary similarity label and its annotation cost in bits."""

    key: PairKey
    label: int  # 1 similar, 0 dissimilar
    provenance: str
    bit_cost: float
    iteration: int = 0

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise DatasetError(f"label must be 0 or 1, got {self.label!r}")
        if self.provenance not in PROVENANCES:
            raise DatasetError(f"unknown provenance {self.provenance!r}")
        expected = 0.0 if self.provenance == "transitive" else 1.0
        if self.bit_cost != expected:
            raise DatasetError(
                f"{self.provenance} pairs cost {expected} bits, got {self.bit_cost}"
            )


@dataclass(frozen=True)
class Item:
    """Read-only view of one dataset row."""

    id: str
    class_label: int
    split: str | None
    base_feature: np.ndarray
    image_uri: str | None = None


@dataclass(frozen=True)
class Dataset:
    """Immutable archive of items with class labels and base features.

    Stored in columnar form; ``items`` materialises row views on demand.
    Safe for concurrent shared reads (feature matrix is write-protected).
    """

    ids: tuple[str, ...]
    class_labels: np.ndarray  # (n,) int64
    splits: tuple[str | None, ...]
    features: np.ndarray  # (n, d0) float32
    num_classes: int
    image_uris: tuple[str | None, ...] = ()

    # derived lookups, filled in __post_init__
    index_of: dict[str, int] = field(default_factory=dict, compare=False, repr=False)
    id_rank: np.ndarray = field(default=None, compare=False, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        n = len(self.ids)
        if not self.image_uris:
            object.__setattr__(self, "image_uris", (None,) * n)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DatasetError(
                f"feature matrix shape {self.features.shape} does not match {n} items"
            )
        if len(self.class_labels) != n or len(self.splits) != n or len(self.image_uris) != n:
            raise DatasetError("column lengths disagree")
        if len(set(self.ids)) != n:
            dupes = sorted({i for i in self.ids if list(self.ids).count(i) > 1})
            raise DatasetError(f"duplicate item ids: {dupes[:5]}")
        bad = [
            (i, int(c))
            for i, c in zip(self.ids, self.class_labels)
            if not 0 <= c < self.num_classes
        ]
        if bad:
            raise DatasetError(
                f"class label out of range [0, {self.num_classes}): {bad[:5]}"
            )
        for s in self.splits:
            if s is not None and s not in SPLITS:
                raise DatasetError(f"unknown split {s!r}")
        self.features.flags.writeable = False
        object.__setattr__(self, "index_of", {i: k for k, i in enumerate(self.ids)})
        # rank[i] = position of ids[i] in lexicographic id order; canonical pair
        # and tie-break contracts compare ranks, which equals comparing id strings
        order = np.argsort(np.asarray(self.ids))
        rank = np.empty(len(self.ids), dtype=np.int64)
        rank[order] = np.arange(len(self.ids))
        object.__setattr__(self, "id_rank", rank)
        self.id_rank.flags.writeable = False

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def d0(self) -> int:
        return self.features.shape[1]

    @property
    def items(self) -> tuple[Item, ...]:
        return tuple(self.item(i) for i in self.ids)

    def item(self, item_id: str) -> Item:
        k = self.index_of[item_id]
        return Item(
            id=item_id,
            class_label=int(self.class_labels[k]),
            split=self.splits[k],
            base_feature=self.features[k],
            image_uri=self.image_uris[k],
        )

    def split_indices(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise DatasetError(f"unknown split {split!r}")
        return np.flatnonzero(np.asarray([s == split for s in self.splits]))

    def same_class(self, key: PairKey) -> bool:
        """Ground-truth similarity of a pair: class-label equality."""
        return bool(
            self.class_labels[self.index_of[key.lo]]
            == self.class_labels[self.index_of[key.hi]]
        )

    def canonical_pair(self, i: int, j: int) -> tuple[int, int]:
        """Order two row indices so the id-rank-lower member comes first."""
        if i == j:
            raise DatasetError(f"pair members must differ, got row {i} twice")
        return (i, j) if self.id_rank[i] < self.id_rank[j] else (j, i)

    def pair_key(self, i: int, j: int) -> PairKey:
        return PairKey(self.ids[i], self.ids[j])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.ids == other.ids
            and self.num_classes == other.num_classes
            and self.splits == other.splits
            and self.image_uris == other.image_uris
            and np.array_equal(self.class_labels, other.class_labels)
            and np.array_equal(self.features, other.features)
        )


def write_features(path: str | Path, features: np.ndarray) -> None:
    """Write a feature matrix in the binary format described in the module docs."""
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise DatasetError(f"feature matrix must be 2-D, got shape {arr.shape}")
    rows, dim = arr.shape
    with open(path, "wb") as fh:
        fh.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, rows, dim))
        fh.write(arr.tobytes())


def read_features(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"feature file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _FEATURE_HEADER.size:
        raise DatasetError(f"feature file too short for header: {path}")
    magic, rows, dim = _FEATURE_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise DatasetError(f"bad magic in feature file {path}: {magic!r}")
    expected = _FEATURE_HEADER.size + rows * dim * 4
    if len(raw) != expected:
        raise DatasetError(
            f"feature file {path} holds {len(raw)} bytes, header implies {expected}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_FEATURE_HEADER.size)
    return data.reshape(rows, dim).astype(np.float32)


def load_manifest(path: str | Path) -> Dataset:
    """Load a dataset from a JSON manifest plus its binary feature file."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest {path} is not valid JSON: {exc}") from exc
    for key in ("num_classes", "feature_file", "items"):
        if key not in doc:
            raise DatasetError(f"manifest {path} missing required field {key!r}")
    features = read_features(path.parent / doc["feature_file"])
    entries = doc["items"]
    if features.shape[0] != len(entries):
        raise DatasetError(
            f"manifest lists {len(entries)} items but feature file has "
            f"{features.shape[0]} rows"
        )
    ids, labels, splits, uris = [], [], [], []
    for e in entries:
        ids.append(str(e["id"]))
        labels.append(int(e["class_label"]))
        splits.append(e.get("split"))
        uris.append(e.get("image_uri"))
    return Dataset(
        ids=tuple(ids),
        class_labels=np.asarray(labels, dtype=np.int64),
        splits=tuple(splits),
        features=features,
        num_classes=int(doc["num_classes"]),
        image_uris=tuple(uris),
    )


def save_manifest(
    dataset: Dataset, path: str | Path, feature_file: str = "features.bin"
) -> None:
    """Write ``dataset`` as a manifest + feature file; inverse of :func:`load_manifest`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_features(path.parent / feature_file, dataset.features)
    items = []
    for k, item_id in enumerate(dataset.ids):
        entry: dict = {"id": item_id, "class_label": int(dataset.class_labels[k])}
        if dataset.splits[k] is not None:
            entry["split"] = dataset.splits[k]
        if dataset.image_uris[k] is not None:
            entry["image_uri"] = dataset.image_uris[k]
        items.append(entry)
    doc = {
        "version": 1,
        "num_classes": dataset.num_classes,
        "feature_file": feature_file,
        "items": items,
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def assign_splits(
    dataset: Dataset,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> Dataset:
    """Partition items into train/val/test by a seeded shuffle.

    Split sizes follow largest-remainder rounding of the fractions, so for
    example 2100 items at (0.8, 0.1, 0.1) give exactly 1680/210/210.
    """
    fracs = tuple(float(f) for f in fractions)
    if len(fracs) != 3 or any(f <= 0 for f in fracs):
        raise DatasetError(f"need three positive fractions, got {fractions}")
    if abs(sum(fracs) - 1.0) > 1e-9:
        raise DatasetError(f"fractions must sum to 1, got {sum(fracs)}")
    n = dataset.n
    quotas = [f * n for f in fracs]
    counts = [math.floor(q) for q in quotas]
    # hand leftover slots to the largest fractional remainders; ties go in
    # split order (train, val, test)
    remainders = sorted(range(3), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in range(n - sum(counts)):
        counts[remainders[i % 3]] += 1
    if any(c == 0 for c in counts):
        raise DatasetError(
            f"dataset of {n} items too small for non-empty splits at {fractions}"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    splits: list[str | None] = [None] * n
    start = 0
    for split_name, count in zip(SPLITS, counts):
        for row in order[start : start + count]:
            splits[row] = split_name
        start += count
    return Dataset(
        ids=dataset.ids,
        class_labels=dataset.class_labels,
        splits=tuple(splits),
        features=dataset.features,
        num_classes=dataset.num_classes,
        image_uris=dataset.image_uris,
    )


def make_synthetic(
    num_classes: int,
    per_class: int,
    dim: int,
    spread: float = 0.25,
    seed: int = 0,
    mixed_fraction: float = 0.0,
    dup_groups: int = 1,
) -> Dataset:
    """Desk-scale stand-in archive: C isotropic Gaussian clusters on the sphere.

    Class means are orthonormal directions (random unit vectors when
    ``dim < num_classes``), so between-class similarities concentrate near
    zero; each scene is its class mean plus isotropic noise of scale
    ``spread``. Two archive-realism knobs: ``mixed_fraction`` draws that
    fraction of scenes between their own mean and a random other class mean
    (still nearer their own), the way mixed-content images sit between
    categories; ``dup_groups > 1`` images every scene that many times with
    tiny jitter, the way archives revisit the same site. Deterministic per
    seed.
    """
    if num_classes < 2:
        raise DatasetError(f"need at least 2 classes, got {num_classes}")
    if per_class < 2:
        raise DatasetError(f"need at least 2 items per class, got {per_class}")
    if spread <= 0:
        raise DatasetError(f"spread must be positive, got {spread}")
    if not 0.0 <= mixed_fraction < 0.5:
        raise DatasetError(f"mixed_fraction must be in [0, 0.5), got {mixed_fraction}")
    if dup_groups < 1 or per_class % dup_groups:
        raise DatasetError(
            f"dup_groups must be >= 1 and divide per_class, got {dup_groups}"
        )
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(num_classes, dim))
    if num_classes <= dim:
        q, _ = np.linalg.qr(means.T)
        means = q.T[:num_classes]
    else:
        means /= np.linalg.norm(means, axis=1, keepdims=True)
    n_scenes = per_class // dup_groups
    n_mixed = int(round(mixed_fraction * n_scenes))
    feats = np.empty((num_classes * per_class, dim), dtype=np.float32)
    ids, labels = [], []
    for c in range(num_classes):
        scenes = means[c] + spread * rng.normal(size=(n_scenes, dim))
        if n_mixed:
            others = rng.choice([o for o in range(num_classes) if o != c], size=n_mixed)
            w = rng.uniform(0.25, 0.45, size=n_mixed)
            scenes[n_scenes - n_mixed :] = (
                (1.0 - w[:, None]) * means[c]
                + w[:, None] * means[others]
                + spread * rng.normal(size=(n_mixed, dim))
            )
        block = scenes
        if dup_groups > 1:
            block = np.repeat(scenes, dup_groups, axis=0)
            block = block + 0.05 * spread * rng.normal(size=block.shape)
        feats[c * per_class : (c + 1) * per_class] = block.astype(np.float32)
        for j in range(per_class):
            ids.append(f"s{c:02d}-{j:04d}")
            labels.append(c)
    return Dataset(
        ids=tuple(ids),
        class_labels=np.asarray(labels, dtype=np.int64),
        splits=(None,) * len(ids),
        features=feats,
        num_classes=num_classes,
    )


def iter_split_pairs(dataset: Dataset, split: str = "train") -> Iterator[PairKey]:
    """All unordered pairs within one split, in canonical key order."""
    idx = dataset.split_indices(split)
    ids = sorted(dataset.ids[i] for i in idx)
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            yield PairKey(ids[a], ids[b])


def pairs_to_indices(dataset: Dataset, pairs: Sequence[PairKey]) -> np.ndarray:
    """Convert pair keys to an (N, 2) array of canonical row indices."""
    out = np.empty((len(pairs), 2), dtype=np.int64)
    for r, key in enumerate(pairs):
        out[r, 0] = dataset.index_of[key.lo]
        out[r, 1] = dataset.index_of[key.hi]
    return out
