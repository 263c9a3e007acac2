"""Datasets, mini-batch sampling, and the coverage-guaranteed shard plan."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .rng import Rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus integer class labels.

    Inputs are float64 with features normalized to [0, 1] or
    standardized; labels lie in [0, n_classes).
    """

    inputs: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    checksum: str = ""

    def __post_init__(self):
        inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2:
            raise DataFormatError("inputs must be a samples x features matrix")
        if labels.ndim != 1 or labels.size != inputs.shape[0]:
            raise DataFormatError(
                f"{inputs.shape[0]} input rows vs {labels.size} labels"
            )
        if labels.size and labels.min() < 0:
            raise DataFormatError("labels must be non-negative class ids")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)
        if not self.checksum:
            h = hashlib.sha256()
            h.update(inputs.tobytes())
            h.update(labels.tobytes())
            object.__setattr__(self, "checksum", h.hexdigest())

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_features(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def subset(self, indices, name: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], name or self.name)


# ---------------------------------------------------------------------------
# Synthetic generators


def make_blobs(
    classes: int, per_class: int, dim: int, spread: float, rng: Rng
) -> Dataset:
    """Gaussian-blob classification data with pairwise-distinct class means."""
    if classes < 1 or per_class < 1 or dim < 1 or spread <= 0:
        raise ValueError("classes, per_class, dim must be >= 1 and spread > 0")
    means = np.empty((classes, dim))
    placed = 0
    while placed < classes:
        cand = rng.normal(size=dim)
        # keep means separated so the classes stay distinct at any spread
        if placed == 0 or np.linalg.norm(means[:placed] - cand, axis=1).min() > 6 * spread:
            means[placed] = cand
            placed += 1
    inputs = np.empty((classes * per_class, dim))
    labels = np.empty(classes * per_class, dtype=np.int64)
    for c in range(classes):
        sl = slice(c * per_class, (c + 1) * per_class)
        inputs[sl] = means[c] + spread * rng.normal(size=(per_class, dim))
        labels[sl] = c
    order = rng.permutation(classes * per_class)
    return Dataset(inputs[order], labels[order], name="blobs")


def make_digits(
    per_class: int,
    rng: Rng,
    classes: int = 10,
    side: int = 28,
    max_shift: int = 5,
    noise: float = 0.7,
) -> Dataset:
    """Synthetic digit-like images: per-class glyph templates, shifted and noised.

    Each class gets a fixed blocky glyph (a coarse random mask upsampled
    to side x side); samples are random translations of the glyph plus
    Gaussian pixel noise, clipped to [0, 1]. Deterministic under seed.
    """
    if per_class < 1 or classes < 1 or side < 8:
        raise ValueError("per_class and classes must be >= 1, side >= 8")
    coarse = side // 4
    templates = np.empty((classes, side, side))
    for c in range(classes):
        mask = (rng.uniform(0.0, 1.0, size=(coarse, coarse)) < 0.4).astype(np.float64)
        glyph = np.kron(mask, np.ones((4, 4)))
        full = np.zeros((side, side))
        full[: glyph.shape[0], : glyph.shape[1]] = glyph
        templates[c] = full
    n = classes * per_class
    inputs = np.empty((n, side * side))
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        c = i % classes
        dx, dy = rng.integers(-max_shift, max_shift + 1, size=2)
        img = np.roll(templates[c], (int(dx), int(dy)), axis=(0, 1))
        img = img + noise * rng.normal(size=(side, side))
        inputs[i] = np.clip(img, 0.0, 1.0).ravel()
        labels[i] = c
    return Dataset(inputs, labels, name="digits")


# ---------------------------------------------------------------------------
# IDX and CSV loading


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise DataFormatError(f"truncated IDX file while reading {what}")
    return data


def load_idx(images_path, labels_path, limit: int | None = None) -> Dataset:
    """Load an IDX image/label pair (big-endian, magics 2051/2049).

    Takes the first `limit` samples (all of them when limit exceeds the
    file count); pixels are scaled to [0, 1].
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    digest = hashlib.sha256()
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise DataFormatError(
                f"{images_path}: bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        n = count if limit is None else min(limit, count)
        raw = _read_exact(f, n * rows * cols, f"{n} images")
        digest.update(raw)
        pixels = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols)
    with open(labels_path, "rb") as f:
        magic, label_count = struct.unpack(">II", _read_exact(f, 8, "label header"))
        if magic != IDX_LABELS_MAGIC:
            raise DataFormatError(
                f"{labels_path}: bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        if label_count != count:
            raise DataFormatError(
                f"count mismatch: {count} images vs {label_count} labels"
            )
        raw = _read_exact(f, n, f"{n} labels")
        digest.update(raw)
        labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    return Dataset(
        pixels.astype(np.float64) / 255.0,
        labels,
        name=images_path.stem,
        checksum=digest.hexdigest(),
    )


def save_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write a dataset with square [0,1] images back out as an IDX pair."""
    side = int(round(dataset.n_features**0.5))
    if side * side != dataset.n_features:
        raise DataFormatError("save_idx needs square images")
    pixels = np.clip(np.rint(dataset.inputs * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, dataset.n_samples, side, side))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, dataset.n_samples))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def load_csv(path, limit: int | None = None) -> Dataset:
    """Load a CSV with a header row; the column named "label" holds class ids."""
    path = Path(path)
    raw = path.read_bytes()
    lines = raw.decode("utf-8").splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty CSV")
    header = [h.strip() for h in lines[0].split(",")]
    if "label" not in header:
        raise DataFormatError(f'{path}: no "label" column in header')
    label_col = header.index("label")
    rows = [ln for ln in lines[1:] if ln.strip()]
    if limit is not None:
        rows = rows[:limit]
    inputs, labels = [], []
    for i, ln in enumerate(rows, start=2):
        cells = ln.split(",")
        if len(cells) != len(header):
            raise DataFormatError(f"{path}:{i}: expected {len(header)} cells, got {len(cells)}")
        try:
            labels.append(int(cells[label_col]))
            inputs.append([float(c) for j, c in enumerate(cells) if j != label_col])
        except ValueError as e:
            raise DataFormatError(f"{path}:{i}: {e}") from e
    return Dataset(
        np.asarray(inputs, dtype=np.float64),
        np.asarray(labels, dtype=np.int64),
        name=path.stem,
        checksum=hashlib.sha256(raw).hexdigest(),
    )


def split_train_val(dataset: Dataset, val_fraction: float, rng: Rng) -> tuple[Dataset, Dataset]:
    """Seeded-shuffle holdout split for datasets without a designated test set."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    order = rng.permutation(dataset.n_samples)
    n_val = max(1, int(round(val_fraction * dataset.n_samples)))
    val, train = order[:n_val], order[n_val:]
    return dataset.subset(train, dataset.name + "-train"), dataset.subset(
        val, dataset.name + "-val"
    )


# ---------------------------------------------------------------------------
# Sharding


@dataclass(frozen=True)
class ShardPlan:
    """Per-replica index lists whose union covers every sample.

    Each list has ceil(fraction * n_samples) entries of distinct indices;
    overlap between replicas appears whenever n * fraction > 1.
    """

    n: int
    fraction: float
    assignment: tuple[np.ndarray, ...] = field(default=())

    def __post_init__(self):
        if len(self.assignment) != self.n:
            raise ValueError(f"expected {self.n} shards, got {len(self.assignment)}")

    def covered(self, n_samples: int) -> bool:
        seen = np.zeros(n_samples, dtype=bool)
        for idx in self.assignment:
            seen[idx] = True
        return bool(seen.all())


def shard(dataset: Dataset, n: int, fraction: float, rng: Rng) -> ShardPlan:
    """Split a dataset into n shards of size ceil(fraction * samples) each.

    A random cyclic deal puts every sample in exactly one shard, then each
    shard is padded with extra distinct random indices up to its target
    size, so every sample lies in at least one shard by construction.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    if n * fraction < 1.0:
        raise ValueError(
            f"infeasible coverage: n * fraction = {n * fraction:g} < 1"
        )
    total = dataset.n_samples
    target = int(np.ceil(fraction * total))
    perm = rng.permutation(total)
    shards = [perm[a::n] for a in range(n)]
    padded = []
    for a in range(n):
        need = target - shards[a].size
        if need > 0:
            # pad with a seeded draw from the indices this shard lacks
            have = np.zeros(total, dtype=bool)
            have[shards[a]] = True
            pool = np.flatnonzero(~have)
            extra = pool[rng.permutation(pool.size)[:need]]
            padded.append(np.concatenate([shards[a], extra]))
        else:
            padded.append(shards[a])
    assignment = tuple(np.asarray(s, dtype=np.int64) for s in padded)
    return ShardPlan(n=n, fraction=fraction, assignment=assignment)


class BatchSampler:
    """Without-replacement mini-batches over an index list, reshuffled per pass.

    Each replica owns one sampler seeded from its own substream, so
    parallel runs stay reproducible.
    """

    def __init__(self, indices: np.ndarray, batch_size: int, rng: Rng):
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size == 0:
            raise ValueError("sampler needs a non-empty index list")
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.indices = indices
        self.batch_size = min(batch_size, indices.size)
        self.rng = rng
        self._order = indices[rng.permutation(indices.size)]
        self._pos = 0

    @property
    def batches_per_pass(self) -> int:
        return int(np.ceil(self.indices.size / self.batch_size))

    def next_batch(self) -> np.ndarray:
        if self._pos >= self._order.size:
            self._order = self.indices[self.rng.permutation(self.indices.size)]
            self._pos = 0
        batch = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return batch
