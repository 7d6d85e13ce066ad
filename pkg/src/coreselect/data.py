"""Core data types, embedding file I/O, and synthetic dataset generation.

Embeddings are stored as 32-bit floats (matching the on-disk format); all
downstream numerics upcast to float64.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, FormatError, IoError
from .rng import stream

MAGIC = b"GEMB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQI")  # magic, version u32, rows u64, dim u32

TRAIN = "train"
PROBE = "probe"
TEST = "test"
SPLITS = (TRAIN, PROBE, TEST)

# Fixed stratified split used by the synthetic generator.
SPLIT_FRACTIONS = ((TRAIN, 0.7), (PROBE, 0.1), (TEST, 0.2))

LABEL_CSV_HEADER = ["index", "label", "split"]


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Dense row-major matrix of embedding vectors, one row per sample."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise DataError(f"embedding matrix must be 2-D, got shape {values.shape}")
        if values.shape[1] < 1:
            raise DataError("embedding dimension must be >= 1")
        if not np.all(np.isfinite(values)):
            raise DataError("embedding matrix contains non-finite components")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def as_f64(self) -> np.ndarray:
        """Float64 copy for internal arithmetic."""
        return self.values.astype(np.float64)


@dataclass(frozen=True)
class LabeledDataset:
    """Embeddings plus integer class labels and train/probe/test split tags."""

    embeddings: EmbeddingMatrix
    labels: np.ndarray
    splits: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self) -> None:
        # copy before freezing so the caller's arrays stay writable
        labels = np.asarray(self.labels, dtype=np.int64).copy()
        splits = np.asarray(self.splits, dtype="U5").copy()
        if labels.shape != (self.embeddings.rows,):
            raise DataError(
                f"label count {labels.shape} does not match {self.embeddings.rows} embedding rows"
            )
        if splits.shape != (self.embeddings.rows,):
            raise DataError("split tag count does not match embedding rows")
        if labels.size and (labels.min() < 0 or labels.max() >= len(self.class_names)):
            raise DataError("labels must lie in [0, number of class names)")
        if not np.all(np.isin(splits, SPLITS)):
            bad = sorted(set(splits.tolist()) - set(SPLITS))
            raise DataError(f"unknown split tags: {bad}")
        labels.setflags(write=False)
        splits.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "splits", splits)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def rows(self) -> int:
        return self.embeddings.rows

    @property
    def dim(self) -> int:
        return self.embeddings.dim

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def split_indices(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}")
        return np.nonzero(self.splits == split)[0]

    def train_indices_by_class(self, label: int) -> np.ndarray:
        return np.nonzero((self.splits == TRAIN) & (self.labels == label))[0]

    def train_class_counts(self) -> np.ndarray:
        train = self.splits == TRAIN
        return np.bincount(self.labels[train], minlength=self.n_classes)


@dataclass(frozen=True)
class Coreset:
    """Ordered, class-balanced index set into a dataset's train split."""

    indices: np.ndarray
    shots_per_class: int

    def __post_init__(self) -> None:
        indices = np.asarray(self.indices, dtype=np.int64).copy()
        if indices.ndim != 1:
            raise ConfigError("coreset indices must be a flat index list")
        if self.shots_per_class < 1:
            raise ConfigError("shots_per_class must be >= 1")
        indices.setflags(write=False)
        object.__setattr__(self, "indices", indices)

    def __len__(self) -> int:
        return int(self.indices.size)

    def validate(self, dataset: LabeledDataset) -> None:
        """Raise ConfigError unless the coreset satisfies its invariants over dataset."""
        idx = self.indices
        if np.unique(idx).size != idx.size:
            raise ConfigError("coreset indices must be unique")
        if idx.size and (idx.min() < 0 or idx.max() >= dataset.rows):
            raise ConfigError("coreset index out of range")
        if np.any(dataset.splits[idx] != TRAIN):
            raise ConfigError("coreset indices must point at the train split")
        counts = np.bincount(dataset.labels[idx], minlength=dataset.n_classes)
        if not np.all(counts == self.shots_per_class):
            raise ConfigError(
                f"coreset must hold exactly {self.shots_per_class} members per class, got {counts.tolist()}"
            )


@dataclass(frozen=True)
class PromptEmbeddingSet:
    """Embeddings of the original prompt templates and their paraphrases."""

    original: EmbeddingMatrix
    paraphrases: EmbeddingMatrix

    def __post_init__(self) -> None:
        if self.original.dim != self.paraphrases.dim:
            raise DataError(
                f"prompt dims differ: original {self.original.dim} vs paraphrases {self.paraphrases.dim}"
            )
        if self.original.rows < 1 or self.paraphrases.rows < 1:
            raise DataError("prompt matrices need at least one row each")


def write_embeddings(matrix: EmbeddingMatrix, path) -> None:
    """Write the binary embedding format: GEMB magic, version, rows, dim, f32 payload."""
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, matrix.rows, matrix.dim)
    payload = np.ascontiguousarray(matrix.values, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_embeddings(path) -> EmbeddingMatrix:
    """Read the binary embedding format written by :func:`write_embeddings`.

    Raises FormatError for bad magic/version or a truncated payload, and
    DataError when the payload holds non-finite components.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, rows, dim = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if dim < 1:
        raise FormatError(f"{path}: dim must be >= 1")
    expected = rows * dim * 4
    got = len(raw) - _HEADER.size
    if got != expected:
        raise FormatError(f"{path}: payload is {got} bytes, expected {expected}")
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(rows, dim)
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: non-finite embedding component")
    return EmbeddingMatrix(values)


def write_labels(labels: np.ndarray, splits: np.ndarray, path) -> None:
    """Write the label CSV (`index,label,split`, one row per sample)."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(LABEL_CSV_HEADER)
            for i, (label, split) in enumerate(zip(labels, splits)):
                writer.writerow([i, int(label), str(split)])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_labels(path) -> tuple[np.ndarray, np.ndarray]:
    """Read the label CSV back into (labels, splits), ordered by the index column."""
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise FormatError(f"{path}: empty label file") from None
            if header != LABEL_CSV_HEADER:
                raise FormatError(f"{path}: expected header {LABEL_CSV_HEADER}, got {header}")
            rows = [row for row in reader if row]
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    n = len(rows)
    labels = np.zeros(n, dtype=np.int64)
    splits = np.empty(n, dtype="U5")
    seen = np.zeros(n, dtype=bool)
    for row in rows:
        if len(row) != 3:
            raise FormatError(f"{path}: malformed row {row}")
        try:
            idx = int(row[0])
            label = int(row[1])
        except ValueError as exc:
            raise FormatError(f"{path}: non-integer index/label in {row}") from exc
        if not 0 <= idx < n or seen[idx]:
            raise DataError(f"{path}: index column must cover 0..{n - 1} exactly once")
        if label < 0:
            raise DataError(f"{path}: negative label at index {idx}")
        if row[2] not in SPLITS:
            raise DataError(f"{path}: unknown split {row[2]!r} at index {idx}")
        labels[idx] = label
        splits[idx] = row[2]
        seen[idx] = True
    return labels, splits


def write_class_names(names, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for name in names:
                fh.write(f"{name}\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_class_names(path) -> tuple[str, ...]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    while lines and not lines[-1]:
        lines.pop()
    if not lines:
        raise FormatError(f"{path}: no class names")
    return tuple(lines)


def l2_normalized(matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    """Row-wise L2 normalization; zero rows are left unchanged."""
    values = matrix.as_f64()
    norms = np.linalg.norm(values, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return EmbeddingMatrix((values / norms).astype(np.float32))


def load_dataset(embeddings_path, labels_path, class_names_path, l2_normalize: bool = False) -> LabeledDataset:
    """Assemble a LabeledDataset from the three on-disk pieces."""
    embeddings = read_embeddings(embeddings_path)
    if l2_normalize:
        embeddings = l2_normalized(embeddings)
    labels, splits = read_labels(labels_path)
    names = read_class_names(class_names_path)
    return LabeledDataset(embeddings, labels, splits, names)


def _apportion_split(count: int) -> dict[str, int]:
    # Largest-remainder apportionment of the fixed 70/10/20 fractions; keeps
    # every part within one sample of its quota.
    quotas = [(name, frac * count) for name, frac in SPLIT_FRACTIONS]
    base = {name: int(math.floor(quota)) for name, quota in quotas}
    leftover = count - sum(base.values())
    by_remainder = sorted(quotas, key=lambda item: item[1] - math.floor(item[1]), reverse=True)
    for name, _ in by_remainder[:leftover]:
        base[name] += 1
    return base


def _equidistant_means(classes: int, dim: int, separation: float) -> np.ndarray:
    # Scaled simplex: pairwise-equidistant class means at distance `separation`.
    corners = np.eye(classes)
    centered = corners - corners.mean(axis=0)
    u, s, _ = np.linalg.svd(centered, full_matrices=False)
    coords = u[:, : classes - 1] * s[: classes - 1]
    means = np.zeros((classes, dim))
    means[:, : classes - 1] = coords * (separation / math.sqrt(2.0))
    return means


def generate_synthetic(
    classes: int,
    per_class: int,
    dim: int,
    separation: float,
    imbalance=None,
    seed: int = 0,
) -> LabeledDataset:
    """Generate class-conditional Gaussian clusters with a stratified 70/10/20 split.

    Class means sit on a scaled simplex so every pair of classes is exactly
    `separation` apart (in units of the unit within-class standard deviation).
    Per-class counts are ``max(1, round(per_class * imbalance[c]))``. The result
    is a pure function of the arguments.
    """
    if classes < 2:
        raise ConfigError("need at least 2 classes")
    if dim < 2:
        raise ConfigError("need dim >= 2")
    if dim < classes - 1:
        raise ConfigError(f"dim={dim} too small for {classes} equidistant class means")
    if per_class < 1:
        raise ConfigError("per_class must be >= 1")
    if not (np.isfinite(separation) and separation >= 0):
        raise ConfigError("separation must be finite and >= 0")
    if imbalance is None:
        imbalance = [1.0] * classes
    if len(imbalance) != classes:
        raise ConfigError(f"imbalance list has {len(imbalance)} entries for {classes} classes")
    if any(not (np.isfinite(r) and r > 0) for r in imbalance):
        raise ConfigError("imbalance ratios must be positive and finite")

    counts = [max(1, round(per_class * r)) for r in imbalance]
    means = _equidistant_means(classes, dim, separation)
    rng = stream(seed, "synth")

    blocks: list[np.ndarray] = []
    labels: list[int] = []
    split_blocks: list[np.ndarray] = []
    for c in range(classes):
        blocks.append(means[c] + rng.standard_normal((counts[c], dim)))
        labels.extend([c] * counts[c])
        parts = _apportion_split(counts[c])
        tags = np.array(
            [TRAIN] * parts[TRAIN] + [PROBE] * parts[PROBE] + [TEST] * parts[TEST], dtype="U5"
        )
        split_blocks.append(tags[rng.permutation(counts[c])])

    values = np.vstack(blocks).astype(np.float32)
    class_names = tuple(f"class_{c}" for c in range(classes))
    return LabeledDataset(
        EmbeddingMatrix(values),
        np.asarray(labels, dtype=np.int64),
        np.concatenate(split_blocks),
        class_names,
    )
