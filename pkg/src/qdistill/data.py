"""Dataset loading, z-score normalisation, balanced subsets and teacher-logit files."""
from __future__ import annotations

import gzip
import hashlib
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, CoverageError, FormatError, ShapeError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32
DATA_ROOT_ENV = "QDISTILL_DATA_ROOT"
LOGITS_HEADER = "# qdistill-teacher-logits v1"

IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_FILES = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray
    zero_std: np.ndarray      # bool mask of features with sigma == 0
    fitted_on: str            # provenance tag of the split the statistics came from

    @property
    def num_degenerate(self) -> int:
        return int(self.zero_std.sum())


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray        # (N, C, H, W) float
    labels: np.ndarray        # (N,) int
    split: str = "train"
    num_classes: int = 10
    name: str = "dataset"
    indices: np.ndarray | None = None   # keys into the source files
    normalization: Normalizer | None = None

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ShapeError(f"images must be (N, C, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ShapeError("image and label counts differ")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ShapeError(f"labels outside 0..{self.num_classes - 1}")
        if self.indices is None:
            object.__setattr__(self, "indices", np.arange(len(self.labels)))

    def __len__(self):
        return len(self.labels)

    def take(self, rows, split: str | None = None) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return replace(self, images=self.images[rows], labels=self.labels[rows],
                       indices=self.indices[rows], split=split or self.split)

    @property
    def tag(self) -> str:
        h = hashlib.sha1(np.ascontiguousarray(self.indices).tobytes()).hexdigest()[:12]
        return f"{self.name}:{self.split}:{h}"


# ---------------------------------------------------------------------------
# Binary formats
# ---------------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    path = os.fspath(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(raw: bytes, magic: int, what: str) -> np.ndarray:
    if len(raw) < 8:
        raise FormatError(f"{what}: file too short for an IDX header (offset {len(raw)})")
    found, = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"{what}: bad magic 0x{found:08x} at offset 0, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{what}: truncated header at offset {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    need = header + int(np.prod(dims))
    if len(raw) != need:
        raise FormatError(f"{what}: expected {need} bytes, file ends at offset {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, split: str = "train", name: str = "mnist",
             num_classes: int = 10) -> Dataset:
    """Read an IDX image/label pair (optionally gzipped); pixels scaled to [0, 1]."""
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, os.fspath(images_path))
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, os.fspath(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return Dataset(images[:, None, :, :].astype(float) / 255.0, labels.astype(np.int64),
                   split=split, num_classes=num_classes, name=name)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    for path, arr, magic in ((images_path, images, IDX_IMAGES_MAGIC),
                             (labels_path, labels, IDX_LABELS_MAGIC)):
        payload = struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.tobytes()
        path = os.fspath(path)
        opener = gzip.open if path.endswith(".gz") else open
        with opener(path, "wb") as fh:
            fh.write(payload)


def load_cifar10(batch_paths, split: str = "train") -> Dataset:
    """Concatenate CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per record)."""
    images, labels = [], []
    for path in batch_paths:
        raw = _read_bytes(path)
        if len(raw) % CIFAR_RECORD:
            offset = (len(raw) // CIFAR_RECORD) * CIFAR_RECORD
            raise FormatError(f"{path}: truncated record starting at byte offset {offset}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        if rec.size and rec[:, 0].max() > 9:
            raise FormatError(f"{path}: label byte above 9")
        labels.append(rec[:, 0].astype(np.int64))
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32))
    return Dataset(np.concatenate(images).astype(float) / 255.0, np.concatenate(labels),
                   split=split, num_classes=10, name="cifar10")


def write_cifar10(images: np.ndarray, labels: np.ndarray, path) -> None:
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), -1)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images], axis=1)
    with open(path, "wb") as fh:
        fh.write(rec.tobytes())


def _find(root, name):
    for candidate in (name, name + ".gz"):
        path = os.path.join(root, candidate)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(f"{name} not found under {root}")


def data_root(explicit=None) -> str:
    root = explicit or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise ConfigError(f"no data root given; pass --data-root or set {DATA_ROOT_ENV}")
    return root


def load_dataset(name: str, root: str, split: str) -> Dataset:
    """Load ``mnist`` / ``fashionmnist`` (IDX) or ``cifar10`` (binary batches) from ``root``."""
    if name in ("mnist", "fashionmnist"):
        img, lab = IDX_FILES[split]
        return load_idx(_find(root, img), _find(root, lab), split=split, name=name)
    if name == "cifar10":
        sub = os.path.join(root, "cifar-10-batches-bin")
        base = sub if os.path.isdir(sub) else root
        return load_cifar10([_find(base, f) for f in CIFAR_FILES[split]], split=split)
    raise ConfigError(f"unknown dataset {name!r}")


# ---------------------------------------------------------------------------
# Normalisation and subsets
# ---------------------------------------------------------------------------

def fit_normalizer(train: Dataset) -> Normalizer:
    """Per-feature population mean and standard deviation of a training split."""
    if len(train) == 0:
        raise ConfigError("cannot fit a normaliser on an empty split")
    if train.split != "train":
        raise ConfigError(f"normaliser must be fitted on the train split, not {train.split!r}")
    mean = train.images.mean(axis=0)
    std = train.images.std(axis=0)
    flat = std <= 1e-12 * np.maximum(1.0, np.abs(mean))   # constant up to rounding
    std = np.where(flat, 0.0, std)
    return Normalizer(mean, std, flat, train.tag)


def apply_normalizer(ds: Dataset, norm: Normalizer) -> Dataset:
    """z = (x - mean) / std elementwise; zero-variance features map to 0."""
    if ds.images.shape[1:] != norm.mean.shape:
        raise ShapeError(f"normaliser shape {norm.mean.shape} vs images {ds.images.shape[1:]}")
    safe = np.where(norm.zero_std, 1.0, norm.std)
    z = np.where(norm.zero_std, 0.0, (ds.images - norm.mean) / safe)
    return replace(ds, images=z, normalization=norm)


def subset(ds: Dataset, per_class: int, seed: int, exclude=None) -> Dataset:
    """Balanced subset with exactly ``per_class`` samples of every label.

    ``exclude`` lists source indices (``ds.indices``) that may not be drawn.
    The result keeps the source order.
    """
    rng = np.random.default_rng(seed)
    allowed = np.ones(len(ds), dtype=bool)
    if exclude is not None:
        allowed &= ~np.isin(ds.indices, np.asarray(exclude))
    rows = []
    for c in range(ds.num_classes):
        pool = np.flatnonzero((ds.labels == c) & allowed)
        if pool.size < per_class:
            raise ConfigError(f"class {c} has {pool.size} samples, {per_class} requested")
        rows.append(rng.choice(pool, size=per_class, replace=False))
    return ds.take(np.sort(np.concatenate(rows)))


def stratified_split(ds: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded per-class split into (train, val)."""
    if not 0 < val_fraction < 1:
        raise ConfigError("val_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    val_rows = []
    for c in range(ds.num_classes):
        rows = np.flatnonzero(ds.labels == c)
        k = int(round(val_fraction * rows.size))
        if rows.size > 1:
            k = min(max(k, 1), rows.size - 1)
        val_rows.append(rng.choice(rows, size=k, replace=False))
    val_rows = np.sort(np.concatenate(val_rows))
    train_rows = np.setdiff1d(np.arange(len(ds)), val_rows)
    return ds.take(train_rows, split="train"), ds.take(val_rows, split="val")


def iterate_minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


# ---------------------------------------------------------------------------
# Teacher logits
# ---------------------------------------------------------------------------

@dataclass
class TeacherLogits:
    teacher_name: str
    num_classes: int
    table: dict = field(default_factory=dict)   # source index -> (C,) logits

    @classmethod
    def from_arrays(cls, teacher_name, indices, logits) -> "TeacherLogits":
        logits = np.asarray(logits, dtype=float)
        return cls(teacher_name, logits.shape[1],
                   {int(i): row.copy() for i, row in zip(indices, logits)})

    def __len__(self):
        return len(self.table)

    def lookup(self, indices) -> np.ndarray:
        missing = [int(i) for i in indices if int(i) not in self.table]
        if missing:
            raise CoverageError(missing)
        return np.stack([self.table[int(i)] for i in indices])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"{LOGITS_HEADER} teacher={self.teacher_name} classes={self.num_classes}\n")
            for key in sorted(self.table):
                vals = " ".join(repr(float(v)) for v in self.table[key])
                fh.write(f"{key} {vals}\n")


def read_teacher_logits(path) -> TeacherLogits:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(LOGITS_HEADER):
        raise FormatError(f"{path}: missing header {LOGITS_HEADER!r}")
    meta = dict(tok.split("=", 1) for tok in lines[0][len(LOGITS_HEADER):].split())
    try:
        num_classes = int(meta["classes"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: header lacks classes=<C>") from exc
    out = TeacherLogits(meta.get("teacher", "unknown"), num_classes)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != num_classes + 1:
            raise FormatError(f"{path}:{lineno}: expected {num_classes} logits, got {len(parts) - 1}")
        out.table[int(parts[0])] = np.array([float(v) for v in parts[1:]])
    return out


def load_teacher_logits(path, ds: Dataset) -> TeacherLogits:
    """Read a logits file and check it covers every sample of ``ds``."""
    table = read_teacher_logits(path)
    if table.num_classes != ds.num_classes:
        raise FormatError(f"{path}: {table.num_classes} classes, dataset has {ds.num_classes}")
    missing = [int(i) for i in ds.indices if int(i) not in table.table]
    if missing:
        raise CoverageError(missing)
    return table
