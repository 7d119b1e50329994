"""Dataset loading, open-set class splits, and training batch iteration.

Supported on-disk formats:

* IDX (MNIST family): big-endian headers, magic 0x00000803 for image files
  and 0x00000801 for label files.
* CIFAR-10 binary: records of 1 label byte followed by 3072 pixel bytes
  (3x32x32, channel-major).

Pixels are scaled to [0, 1] as byte/255 with no further standardization.
Unknown test samples carry the sentinel label -1 after relabeling.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .rng import named_rng

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD_LEN = 3073
UNKNOWN_LABEL = -1


@dataclass
class LabeledImages:
    images: np.ndarray  # B x C x H x W float32 in [0, 1]
    labels: np.ndarray  # B original class ids
    source: str

    def __len__(self):
        return self.images.shape[0]


def _read_exact(f, n, path):
    # Check the declared size against what the file actually holds before
    # reading, so a corrupted header can never trigger a giant allocation.
    pos = f.tell()
    remaining = os.fstat(f.fileno()).st_size - pos
    if remaining < n:
        raise FormatError(f"{path}: truncated, wanted {n} bytes, got {max(remaining, 0)}")
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"{path}: truncated, wanted {n} bytes, got {len(buf)}")
    return buf


def load_idx(images_path, labels_path) -> LabeledImages:
    """Load an IDX image/label file pair into float images in [0, 1]."""
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">iiii", _read_exact(f, 16, images_path))
        if magic != IDX_IMAGE_MAGIC:
            raise FormatError(
                f"{images_path}: bad image magic 0x{magic & 0xFFFFFFFF:08x}, "
                f"expected 0x{IDX_IMAGE_MAGIC:08x}"
            )
        if count < 0 or (count > 0 and (rows <= 0 or cols <= 0)):
            raise FormatError(f"{images_path}: invalid dims count={count} {rows}x{cols}")
        raw = _read_exact(f, count * rows * cols, images_path)
        if f.read(1):
            raise FormatError(f"{images_path}: trailing bytes after payload")
    with open(labels_path, "rb") as f:
        magic, lcount = struct.unpack(">ii", _read_exact(f, 8, labels_path))
        if magic != IDX_LABEL_MAGIC:
            raise FormatError(
                f"{labels_path}: bad label magic 0x{magic & 0xFFFFFFFF:08x}, "
                f"expected 0x{IDX_LABEL_MAGIC:08x}"
            )
        if lcount < 0:
            raise FormatError(f"{labels_path}: negative item count {lcount}")
        labels = np.frombuffer(_read_exact(f, lcount, labels_path), dtype=np.uint8)
        if f.read(1):
            raise FormatError(f"{labels_path}: trailing bytes after payload")
    if count != lcount:
        raise FormatError(f"image count {count} != label count {lcount}")
    if count == 0:
        images = np.zeros((0, 1, max(rows, 0), max(cols, 0)), dtype=np.float32)
    else:
        images = (
            np.frombuffer(raw, dtype=np.uint8)
            .reshape(count, 1, rows, cols)
            .astype(np.float32)
            / 255.0
        )
    return LabeledImages(images=images, labels=labels.astype(np.int64), source=str(images_path))


def load_cifar10(batch_paths) -> LabeledImages:
    """Load one or more CIFAR-10 binary batch files."""
    all_images, all_labels = [], []
    for path in batch_paths:
        with open(path, "rb") as f:
            raw = f.read()
        if len(raw) % CIFAR_RECORD_LEN != 0:
            raise FormatError(
                f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD_LEN}"
            )
        n = len(raw) // CIFAR_RECORD_LEN
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(n, CIFAR_RECORD_LEN)
        all_labels.append(rec[:, 0].astype(np.int64))
        all_images.append(rec[:, 1:].reshape(n, 3, 32, 32).astype(np.float32) / 255.0)
    if not all_images:
        raise DataError("no CIFAR batch files given")
    return LabeledImages(
        images=np.concatenate(all_images),
        labels=np.concatenate(all_labels),
        source=";".join(str(p) for p in batch_paths),
    )


@dataclass(frozen=True)
class OpenSetSplit:
    known_classes: tuple  # sorted original ids
    unknown_classes: tuple  # sorted original ids (possibly from another source)
    seed: int
    trial: int

    @property
    def n_known(self):
        return len(self.known_classes)

    def relabel(self, labels: np.ndarray) -> np.ndarray:
        """Map original ids to [0, N) for knowns and -1 for everything else."""
        table = {c: i for i, c in enumerate(self.known_classes)}
        return np.array([table.get(int(y), UNKNOWN_LABEL) for y in labels], dtype=np.int64)

    def original_label(self, relabeled: int) -> int:
        return self.known_classes[relabeled]


def make_split(total_classes, n_known, seed, trial, unknown_pool=None) -> OpenSetSplit:
    """Sample n_known classes without replacement; the rest (or a separate
    pool, for cross-dataset protocols) become unknown."""
    if not 2 <= n_known <= total_classes:
        raise ConfigError(f"n_known={n_known} out of range [2, {total_classes}]")
    rng = named_rng("split", seed, trial)
    known = np.sort(rng.choice(total_classes, size=n_known, replace=False))
    if unknown_pool is not None:
        unknown = tuple(sorted(int(c) for c in unknown_pool))
    else:
        unknown = tuple(int(c) for c in range(total_classes) if c not in set(known.tolist()))
    return OpenSetSplit(
        known_classes=tuple(int(c) for c in known),
        unknown_classes=unknown,
        seed=int(seed),
        trial=int(trial),
    )


def known_subset(data: LabeledImages, split: OpenSetSplit):
    """Images and relabeled labels of the known classes only."""
    relabeled = split.relabel(data.labels)
    mask = relabeled != UNKNOWN_LABEL
    return data.images[mask], relabeled[mask]


def batches(data: LabeledImages, split: OpenSetSplit, batch_size, seed, epoch):
    """Shuffled known-class batches for one epoch; the last partial batch is kept."""
    images, labels = known_subset(data, split)
    if len(labels) == 0:
        raise DataError("no known-class samples available for batching")
    order = named_rng("shuffle", seed, epoch).permutation(len(labels))
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        yield images[idx], labels[idx]
