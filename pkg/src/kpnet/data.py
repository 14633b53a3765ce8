"""IDX ingestion, class-balanced sampling, splitting and flip augmentation."""
from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import ConfigError, CountMismatchError, DataError, MagicError, TruncatedError

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

# IDX type byte -> big-endian numpy dtype
_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {np.dtype(v).newbyteorder("="): k for k, v in _IDX_TYPES.items()}


def _open(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx_array(path) -> np.ndarray:
    """Parse any IDX container into a native-endian array."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise TruncatedError(f"{path}: {len(raw)} bytes, too short for an IDX header")
    zero, code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or code not in _IDX_TYPES or ndim == 0:
        raise MagicError(f"{path}: bad IDX magic {struct.unpack('>I', raw[:4])[0]}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedError(f"{path}: header needs {header} bytes, file has {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = _IDX_TYPES[code]
    need = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - header < need:
        raise TruncatedError(f"{path}: payload needs {need} bytes, file has {len(raw) - header}")
    return np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims)), offset=header).reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    try:
        code = _IDX_CODES[array.dtype.newbyteorder("=")]
    except KeyError:
        raise DataError(f"dtype {array.dtype} has no IDX type code") from None
    payload = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    payload += array.astype(_IDX_TYPES[code]).tobytes()
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as f:
        f.write(payload)


@dataclass
class Dataset:
    """Images N×C×H×W in [0, 1] with integer labels in [0, num_classes)."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    indices: Optional[np.ndarray] = None  # positions in the source dataset
    _by_class: list = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"images must be N×C×H×W, got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise CountMismatchError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels outside [0, {self.num_classes})")
        if self.indices is None:
            self.indices = np.arange(len(self.labels))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def by_class(self) -> list[np.ndarray]:
        if self._by_class is None:
            self._by_class = [np.flatnonzero(self.labels == k) for k in range(self.num_classes)]
        return self._by_class

    def take(self, positions) -> "Dataset":
        positions = np.asarray(positions, dtype=np.int64)
        return Dataset(self.images[positions], self.labels[positions], self.num_classes, self.indices[positions])


def read_idx(images_path, labels_path, num_classes: Optional[int] = None) -> Dataset:
    """Load an image/label IDX pair; byte pixels are scaled by 1/255."""
    images = read_idx_array(images_path)
    labels = read_idx_array(labels_path)
    if images.ndim not in (3, 4):
        raise MagicError(f"{images_path}: expected a 3-D (or 4-D) image file, got {images.ndim}-D (magic {IMAGE_MAGIC} expected)")
    if labels.ndim != 1:
        raise MagicError(f"{labels_path}: expected a 1-D label file, got {labels.ndim}-D (magic {LABEL_MAGIC} expected)")
    if len(images) != len(labels):
        raise CountMismatchError(f"{images_path} has {len(images)} items but {labels_path} has {len(labels)}")
    if images.ndim == 3:
        images = images[:, None]
    if images.dtype == np.uint8:
        images = images.astype(np.float32) / np.float32(255)
    else:
        images = images.astype(np.float32)
    k = num_classes if num_classes is not None else (int(labels.max()) + 1 if len(labels) else 0)
    return Dataset(images, labels.astype(np.int64), k)


def load_split(data_dir, split: str) -> Dataset:
    """Find ``<split>-images-idx3-ubyte[.gz]`` and the matching label file."""
    data_dir = Path(data_dir)
    prefix = {"train": "train", "test": "t10k"}.get(split, split)
    for stem in (prefix, split):
        for suffix in ("", ".gz"):
            img = data_dir / f"{stem}-images-idx3-ubyte{suffix}"
            lab = data_dir / f"{stem}-labels-idx1-ubyte{suffix}"
            if img.exists() and lab.exists():
                return read_idx(img, lab)
    raise DataError(f"{data_dir}: no IDX files for split {split!r}")


@dataclass(frozen=True)
class SubsetSpec:
    total: int
    seed: int = 0

    def quota(self, num_classes: int) -> int:
        if num_classes < 1 or self.total % num_classes:
            raise ConfigError(f"subset size {self.total} is not divisible by {num_classes} classes")
        q = self.total // num_classes
        if q < 1:
            raise ConfigError("subset quota per class must be at least 1")
        return q


def class_balanced_subset(d: Dataset, spec: SubsetSpec) -> Dataset:
    """Exactly ``total / K`` samples per class, chosen by a seeded shuffle within each class."""
    quota = spec.quota(d.num_classes)
    rng = np.random.default_rng(spec.seed)
    picks = []
    for k, members in enumerate(d.by_class):
        if len(members) < quota:
            raise DataError(f"class {k} has {len(members)} samples, subset needs {quota}")
        picks.append(rng.permutation(members)[:quota])
    return d.take(np.sort(np.concatenate(picks)))


def train_val_split(d: Dataset, val_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Class-balanced, disjoint and exhaustive split; ``round(n_k * val_fraction)`` per class to val."""
    if not 0 <= val_fraction < 1:
        raise ConfigError(f"val_fraction must lie in [0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    train, val = [], []
    for members in d.by_class:
        shuffled = rng.permutation(members)
        n_val = int(round(len(members) * val_fraction))
        val.append(shuffled[:n_val])
        train.append(shuffled[n_val:])
    return d.take(np.sort(np.concatenate(train))), d.take(np.sort(np.concatenate(val)))


def augment_hflip(images: np.ndarray, probability: float, rng: np.random.Generator) -> np.ndarray:
    """Mirror each image left-right with ``probability``; returns a new array."""
    flip = rng.random(len(images)) < probability
    out = images.copy()
    out[flip] = out[flip, ..., ::-1]
    return out


class BatchStream:
    """Endless shuffled minibatches; reshuffles at each epoch boundary."""

    def __init__(self, d: Dataset, batch_size: int, seed: int = 0, flip_probability: float = 0.0):
        if batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {batch_size}")
        if len(d) == 0:
            raise DataError("cannot draw batches from an empty dataset")
        self.data = d
        self.batch_size = min(batch_size, len(d))
        self.flip_probability = flip_probability
        self.rng = np.random.default_rng(seed)
        self.epoch = 0
        self._order = self.rng.permutation(len(d))
        self._pos = 0

    @property
    def batches_per_epoch(self) -> int:
        return max(1, len(self.data) // self.batch_size)

    def next(self) -> tuple[np.ndarray, np.ndarray, bool]:
        """Return ``(images, labels, epoch_ended)``."""
        if self._pos + self.batch_size > len(self._order):
            self._order = self.rng.permutation(len(self.data))
            self._pos = 0
        idx = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        ended = self._pos + self.batch_size > len(self._order)
        if ended:
            self.epoch += 1
        images = self.data.images[idx]
        if self.flip_probability > 0:
            images = augment_hflip(images, self.flip_probability, self.rng)
        return images, self.data.labels[idx], ended

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray, bool]]:
        while True:
            yield self.next()


def iterate_batches(d: Dataset, batch_size: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """One ordered pass, last batch possibly short."""
    for start in range(0, len(d), batch_size):
        yield d.images[start : start + batch_size], d.labels[start : start + batch_size]


def save_manifest(path, d: Dataset, **meta) -> None:
    doc = {"indices": [int(i) for i in d.indices], "labels": [int(v) for v in d.labels], **meta}
    Path(path).write_text(json.dumps(doc) + "\n")


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
