import struct

import numpy as np
import pytest

from rplnet.data import (
    CIFAR_RECORD_LEN,
    IDX_IMAGE_MAGIC,
    IDX_LABEL_MAGIC,
    UNKNOWN_LABEL,
    LabeledImages,
    batches,
    known_subset,
    load_cifar10,
    load_idx,
    make_split,
)
from rplnet.errors import ConfigError, DataError, FormatError

from _datasets import write_cifar_batch, write_idx_pair


def idx_pair(tmp_path, images, labels, prefix="train"):
    return write_idx_pair(tmp_path, np.asarray(images, dtype=np.uint8),
                          np.asarray(labels, dtype=np.uint8), prefix)


# -- IDX ---------------------------------------------------------------------

def test_idx_round_trip_scaling(tmp_path):
    img = np.array([[[0, 128], [255, 64]]], dtype=np.uint8)
    paths = idx_pair(tmp_path, img, [7])
    data = load_idx(*paths)
    assert data.images.shape == (1, 1, 2, 2)
    assert data.images.dtype == np.float32
    expected = np.array([0, 128, 255, 64], dtype=np.float32) / 255.0
    assert np.array_equal(data.images.reshape(-1), expected)
    assert data.labels.tolist() == [7]


def test_idx_wrong_image_magic_names_observed_value(tmp_path):
    img_path, lab_path = idx_pair(tmp_path, np.zeros((1, 2, 2)), [0])
    with open(img_path, "r+b") as f:
        f.write(struct.pack(">i", 0x00000804))
    with pytest.raises(FormatError, match="0x00000804"):
        load_idx(img_path, lab_path)


def test_idx_wrong_label_magic(tmp_path):
    img_path, lab_path = idx_pair(tmp_path, np.zeros((1, 2, 2)), [0])
    with open(lab_path, "r+b") as f:
        f.write(struct.pack(">i", IDX_IMAGE_MAGIC))
    with pytest.raises(FormatError, match="label magic"):
        load_idx(img_path, lab_path)


def test_idx_zero_items_is_valid(tmp_path):
    paths = idx_pair(tmp_path, np.zeros((0, 4, 4), dtype=np.uint8), np.zeros(0))
    data = load_idx(*paths)
    assert len(data) == 0


def test_idx_truncated_payload(tmp_path):
    img_path, lab_path = idx_pair(tmp_path, np.zeros((2, 3, 3)), [0, 1])
    with open(img_path, "rb") as f:
        raw = f.read()
    with open(img_path, "wb") as f:
        f.write(raw[:-5])
    with pytest.raises(FormatError, match="truncated"):
        load_idx(img_path, lab_path)


def test_idx_trailing_bytes(tmp_path):
    img_path, lab_path = idx_pair(tmp_path, np.zeros((1, 2, 2)), [0])
    with open(img_path, "ab") as f:
        f.write(b"\x00")
    with pytest.raises(FormatError, match="trailing"):
        load_idx(img_path, lab_path)


def test_idx_count_mismatch(tmp_path):
    img_path, _ = idx_pair(tmp_path, np.zeros((2, 2, 2)), [0, 1])
    _, lab_path = idx_pair(tmp_path, np.zeros((3, 2, 2)), [0, 1, 2], prefix="other")
    with pytest.raises(FormatError, match="2 != label count 3"):
        load_idx(img_path, lab_path)


def test_idx_loader_never_crashes_on_fuzzed_bytes(tmp_path):
    img_path, lab_path = idx_pair(tmp_path, np.zeros((2, 3, 3)), [0, 1])
    with open(img_path, "rb") as f:
        good = f.read()
    rng = np.random.default_rng(0)
    for i in range(50):
        bad = bytearray(good)
        for pos in rng.integers(0, len(bad), size=rng.integers(1, 6)):
            bad[pos] = int(rng.integers(0, 256))
        with open(img_path, "wb") as f:
            f.write(bytes(bad))
        try:
            load_idx(img_path, lab_path)
        except FormatError:
            pass  # structured rejection is the contract; crashes are not


# -- CIFAR -------------------------------------------------------------------

def test_cifar_single_record(tmp_path):
    path = tmp_path / "batch.bin"
    img = np.full((1, 3, 32, 32), 51, dtype=np.uint8)
    write_cifar_batch(path, img, np.array([7], dtype=np.uint8))
    data = load_cifar10([path])
    assert data.labels.tolist() == [7]
    assert np.all(data.images == np.float32(51 / 255.0))


def test_cifar_bad_length(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\x00" * 3072)
    with pytest.raises(FormatError, match="3072"):
        load_cifar10([path])


def test_cifar_multiple_batches_concatenate(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    write_cifar_batch(a, np.zeros((2, 3, 32, 32), dtype=np.uint8), np.array([1, 2], dtype=np.uint8))
    write_cifar_batch(b, np.zeros((1, 3, 32, 32), dtype=np.uint8), np.array([3], dtype=np.uint8))
    data = load_cifar10([a, b])
    assert data.labels.tolist() == [1, 2, 3]


def test_cifar_no_batches(tmp_path):
    with pytest.raises(DataError):
        load_cifar10([])


# -- splits ------------------------------------------------------------------

def test_make_split_partitions_classes():
    split = make_split(10, 6, seed=0, trial=0)
    known, unknown = set(split.known_classes), set(split.unknown_classes)
    assert len(known) == 6 and len(unknown) == 4
    assert known | unknown == set(range(10))
    assert not known & unknown


def test_make_split_deterministic_and_trial_dependent():
    a = make_split(10, 6, seed=0, trial=0)
    b = make_split(10, 6, seed=0, trial=0)
    c = make_split(10, 6, seed=0, trial=1)
    assert a == b
    assert a.known_classes != c.known_classes or a is not c  # same seed, new trial may differ
    assert any(make_split(10, 6, 0, t).known_classes != a.known_classes for t in range(1, 5))


def test_make_split_all_classes_known():
    split = make_split(10, 10, seed=3, trial=0)
    assert split.known_classes == tuple(range(10))
    assert split.unknown_classes == ()


def test_make_split_rejects_bad_n_known():
    with pytest.raises(ConfigError):
        make_split(10, 1, seed=0, trial=0)
    with pytest.raises(ConfigError):
        make_split(10, 11, seed=0, trial=0)


def test_make_split_external_unknown_pool():
    split = make_split(10, 6, seed=0, trial=0, unknown_pool=range(10))
    assert split.unknown_classes == tuple(range(10))


def test_relabel_round_trip():
    split = make_split(10, 4, seed=1, trial=2)
    labels = np.array(list(range(10)), dtype=np.int64)
    relabeled = split.relabel(labels)
    for orig, new in zip(labels, relabeled):
        if new == UNKNOWN_LABEL:
            assert orig not in split.known_classes
        else:
            assert split.original_label(int(new)) == orig
    assert sorted(n for n in relabeled if n != UNKNOWN_LABEL) == [0, 1, 2, 3]


# -- batching ----------------------------------------------------------------

def toy_data(n=300, classes=10, seed=0):
    rng = np.random.default_rng(seed)
    return LabeledImages(
        images=rng.random((n, 1, 4, 4)).astype(np.float32),
        labels=rng.integers(0, classes, size=n).astype(np.int64),
        source="toy",
    )


def test_batches_sizes_and_partial_final():
    data = toy_data(n=300)
    split = make_split(10, 10, seed=0, trial=0)
    sizes = [len(y) for _, y in batches(data, split, batch_size=128, seed=0, epoch=0)]
    assert sizes == [128, 128, 44]


def test_batches_exclude_unknown_labels():
    data = toy_data()
    split = make_split(10, 6, seed=0, trial=0)
    for _, y in batches(data, split, batch_size=64, seed=0, epoch=0):
        assert np.all(y >= 0)
        assert np.all(y < 6)


def test_batches_cover_every_known_sample_once():
    data = toy_data()
    split = make_split(10, 6, seed=0, trial=0)
    _, expected = known_subset(data, split)
    seen = np.concatenate([y for _, y in batches(data, split, 32, seed=0, epoch=0)])
    assert sorted(seen.tolist()) == sorted(expected.tolist())


def test_batches_shuffle_changes_with_epoch_but_not_rerun():
    data = toy_data()
    split = make_split(10, 10, seed=0, trial=0)

    def first_batch(epoch):
        x, y = next(iter(batches(data, split, 32, seed=0, epoch=epoch)))
        return x.copy(), y.copy()

    x0, y0 = first_batch(0)
    x0b, y0b = first_batch(0)
    x1, y1 = first_batch(1)
    assert np.array_equal(x0, x0b) and np.array_equal(y0, y0b)
    assert not np.array_equal(y0, y1) or not np.array_equal(x0, x1)


def test_batches_empty_known_set_raises():
    data = toy_data()
    data.labels[...] = 9  # only class 9 present
    split = make_split(10, 2, seed=4, trial=0)
    if 9 in split.known_classes:  # pick a split excluding class 9
        split = make_split(10, 2, seed=4, trial=3)
    assert 9 not in split.known_classes
    with pytest.raises(DataError):
        list(batches(data, split, 32, seed=0, epoch=0))


def test_dataset_reload_is_bit_exact(tmp_path):
    rng = np.random.default_rng(5)
    imgs = rng.integers(0, 256, size=(10, 8, 8)).astype(np.uint8)
    paths = idx_pair(tmp_path, imgs, rng.integers(0, 10, size=10))
    a, b = load_idx(*paths), load_idx(*paths)
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.labels, b.labels)
