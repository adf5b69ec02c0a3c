"""Dataset ingestion: binary batches, class directories, synthetic corpora."""

import os

import numpy as np
import pytest

from fedsteg.data import DatasetDescriptor, LabeledDataset, ingest_dataset
from fedsteg.synth import (
    labeled_corpus,
    texture_corpus,
    write_cifar_batches,
    write_class_dirs,
)


def _tiny_pair(height=16, width=16, per_class=6, num_classes=4, seed=0):
    train = labeled_corpus(per_class, num_classes, height, width, seed=seed)
    test = labeled_corpus(2, num_classes, height, width, seed=seed + 1)
    return train, test


def test_cifar_binary_round_trip(tmp_path):
    train, test = _tiny_pair()
    root = str(tmp_path / "bin")
    write_cifar_batches(train, test, root)
    desc = DatasetDescriptor(name="disk", root=root, num_classes=4,
                             image_shape=(16, 16, 3), layout="cifar-binary")
    got = ingest_dataset(desc, "train")
    assert got.image_shape == (16, 16, 3)
    assert np.array_equal(got.labels, train.labels)
    # uint8 quantization is the only loss permitted
    q = np.clip(np.rint(train.images * 255.0), 0, 255) / 255.0
    assert np.allclose(got.images, q, atol=0, rtol=0)
    got_test = ingest_dataset(desc, "test")
    assert len(got_test) == len(test)


def test_class_dirs_round_trip(tmp_path):
    train, _ = _tiny_pair()
    root = str(tmp_path / "dirs")
    write_class_dirs(train, root)
    desc = DatasetDescriptor(name="disk", root=root, num_classes=4,
                             image_shape=(16, 16, 3), layout="class-dirs")
    got = ingest_dataset(desc, "train")
    assert len(got) == len(train)
    assert np.array_equal(np.bincount(got.labels), np.bincount(train.labels))
    # PNG is lossless, so pixels survive up to the same quantization
    by_label = {c: sorted(map(lambda a: a.tobytes(),
                              got.images[got.labels == c])) for c in range(4)}
    q = np.clip(np.rint(train.images * 255.0), 0, 255).astype(np.float32) / 255.0
    want = {c: sorted(map(lambda a: a.tobytes(),
                          q[train.labels == c])) for c in range(4)}
    assert by_label == want


def test_layout_autodetection(tmp_path):
    train, test = _tiny_pair()
    bin_root = str(tmp_path / "bin")
    dir_root = str(tmp_path / "dirs")
    write_cifar_batches(train, test, bin_root)
    write_class_dirs(train, dir_root)
    for root in (bin_root, dir_root):
        desc = DatasetDescriptor(name="disk", root=root, num_classes=4,
                                 image_shape=(16, 16, 3), layout="auto")
        assert len(ingest_dataset(desc, "train")) == len(train)


def test_unknown_layout_error_names_both(tmp_path):
    root = tmp_path / "junk"
    root.mkdir()
    (root / "notes.txt").write_text("not a dataset")
    desc = DatasetDescriptor(name="disk", root=str(root), num_classes=4,
                             image_shape=(16, 16, 3))
    with pytest.raises(ValueError) as err:
        ingest_dataset(desc, "train")
    assert "binary" in str(err.value).lower()
    assert "class" in str(err.value).lower()


def test_missing_and_empty_roots(tmp_path):
    desc = DatasetDescriptor(name="disk", root=str(tmp_path / "absent"))
    with pytest.raises(FileNotFoundError):
        ingest_dataset(desc, "train")
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(ValueError):
        ingest_dataset(DatasetDescriptor(name="disk", root=str(empty)), "train")
    with pytest.raises(ValueError):
        ingest_dataset(DatasetDescriptor(name="synth"), "validation")


def test_corrupt_binary_batch(tmp_path):
    root = tmp_path / "bad"
    root.mkdir()
    (root / "data_batch_1.bin").write_bytes(b"\x00" * 100)  # not a record multiple
    desc = DatasetDescriptor(name="disk", root=str(root), num_classes=4,
                             image_shape=(16, 16, 3), layout="cifar-binary")
    with pytest.raises(ValueError, match="multiple"):
        ingest_dataset(desc, "train")


def test_subset_per_class_takes_prefix():
    ds = labeled_corpus(10, num_classes=3, height=8, width=8, seed=5)
    sub = ds.subset_per_class(4)
    assert len(sub) == 12
    assert all(np.sum(sub.labels == c) == 4 for c in range(3))
    # subsetting preserves load order, so each kept image appears in the source
    src = {img.tobytes() for img in ds.images}
    assert all(img.tobytes() in src for img in sub.images)


def test_descriptor_subsetting_applies_after_load(tmp_path):
    train, test = _tiny_pair(per_class=6)
    root = str(tmp_path / "bin")
    write_cifar_batches(train, test, root)
    desc = DatasetDescriptor(name="disk", root=root, num_classes=4,
                             image_shape=(16, 16, 3), subset_per_class=3)
    got = ingest_dataset(desc, "train")
    assert len(got) == 12
    assert all(np.sum(got.labels == c) == 3 for c in range(4))


def test_synth_corpus_banded_and_deterministic():
    a = ingest_dataset(DatasetDescriptor(name="synth", num_classes=5,
                                         image_shape=(16, 16, 3),
                                         synth_train_per_class=8), "train")
    b = ingest_dataset(DatasetDescriptor(name="synth", num_classes=5,
                                         image_shape=(16, 16, 3),
                                         synth_train_per_class=8), "train")
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.labels, b.labels)
    assert len(a) == 40
    assert a.images.min() >= 0.0 and a.images.max() <= 1.0
    counts = np.bincount(a.labels, minlength=5)
    assert counts.tolist() == [8] * 5
    # train and test splits draw from different streams
    t = ingest_dataset(DatasetDescriptor(name="synth", num_classes=5,
                                         image_shape=(16, 16, 3),
                                         synth_test_per_class=8), "test")
    assert not np.array_equal(a.images[:8], t.images[:8])


def test_synth_prefix_stays_class_balanced():
    ds = labeled_corpus(5, num_classes=4, height=8, width=8, seed=0)
    for prefix in (4, 8, 12):
        counts = np.bincount(ds.labels[:prefix], minlength=4)
        assert counts.max() - counts.min() <= 1


def test_texture_corpus_shape_and_range():
    arr = texture_corpus(7, height=12, width=20, seed=3)
    assert arr.shape == (7, 12, 20, 3)
    assert arr.dtype == np.float32
    assert arr.min() >= 0.0 and arr.max() <= 1.0
    assert np.array_equal(arr, texture_corpus(7, height=12, width=20, seed=3))


def test_labeled_dataset_validation():
    img = np.zeros((4, 8, 8, 3), dtype=np.float32)
    with pytest.raises(ValueError):
        LabeledDataset(img, np.zeros(3, dtype=np.int64), num_classes=2)
    with pytest.raises(ValueError):
        LabeledDataset(img, np.array([0, 1, 2, 5]), num_classes=3)
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((4, 8, 8)), np.zeros(4), num_classes=2)


def test_take_returns_view_copy_semantics():
    ds = labeled_corpus(3, num_classes=2, height=8, width=8, seed=1)
    sub = ds.take([0, 2, 4])
    assert len(sub) == 3
    assert sub.num_classes == 2
    assert np.array_equal(sub.images[1], ds.images[2])
