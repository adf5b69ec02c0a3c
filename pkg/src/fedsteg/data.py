"""Labeled image datasets and on-disk ingestion.

Two layouts are supported: CIFAR-style binary batches (records of one
label byte + H*W*C pixel bytes in channel-planar order) and a
directory-per-class tree of image files.  Images normalize to float32
(N, H, W, C) in [0, 1].
"""

import os
from dataclasses import dataclass, field, replace

import numpy as np

CIFAR_RECORD = 3073  # canonical 32x32x3 record: label byte + planar pixels

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".ppm")


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, H, W, C) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    num_classes: int
    name: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, H, W, C), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels out of range for num_classes")

    def __len__(self):
        return len(self.images)

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    def take(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices)
        return LabeledDataset(self.images[indices], self.labels[indices],
                              self.num_classes, self.name)

    def subset_per_class(self, per_class: int) -> "LabeledDataset":
        """First ``per_class`` samples of each class, in load order."""
        keep = []
        for c in range(self.num_classes):
            idx = np.flatnonzero(self.labels == c)[:per_class]
            keep.append(idx)
        order = np.sort(np.concatenate(keep))
        return self.take(order)


@dataclass
class DatasetDescriptor:
    name: str
    root: str = ""
    num_classes: int = 10
    image_shape: tuple = (32, 32, 3)
    subset_per_class: int = 0  # 0 keeps everything
    layout: str = "auto"  # auto | cifar-binary | class-dirs
    # synthetic-corpus knobs, used when name == "synth"
    synth_train_per_class: int = 500
    synth_test_per_class: int = 100


def _read_cifar_binary(root: str, split: str, shape, num_classes: int) -> LabeledDataset:
    h, w, ch = shape
    record = 1 + h * w * ch  # label byte + planar pixels; 3073 for 32x32x3
    names = sorted(os.listdir(root))
    if split == "train":
        files = [n for n in names if n.startswith("data_batch") and n.endswith(".bin")]
    else:
        files = [n for n in names if n.startswith("test_batch") and n.endswith(".bin")]
    if not files:
        raise FileNotFoundError(f"no CIFAR-style .bin files for split {split!r} under {root}")
    images, labels = [], []
    for fname in files:
        raw = np.fromfile(os.path.join(root, fname), dtype=np.uint8)
        if raw.size % record:
            raise ValueError(f"{fname}: size {raw.size} is not a multiple of {record}")
        recs = raw.reshape(-1, record)
        labels.append(recs[:, 0].astype(np.int64))
        pix = recs[:, 1:].reshape(-1, ch, h, w)
        images.append(pix.transpose(0, 2, 3, 1))
    images = np.concatenate(images).astype(np.float32) / 255.0
    labels = np.concatenate(labels)
    return LabeledDataset(images, labels, num_classes, name=f"cifar-binary:{split}")


def _read_class_dirs(root: str, split: str, shape, num_classes: int) -> LabeledDataset:
    from PIL import Image

    base = os.path.join(root, split)
    if not os.path.isdir(base):
        base = root
    class_names = sorted(
        d for d in os.listdir(base) if os.path.isdir(os.path.join(base, d))
    )
    if not class_names:
        raise FileNotFoundError(f"no class directories under {base}")
    if len(class_names) != num_classes:
        raise ValueError(
            f"{base}: found {len(class_names)} class directories, descriptor says {num_classes}"
        )
    height, width = shape[0], shape[1]
    images, labels = [], []
    for label, cname in enumerate(class_names):
        cdir = os.path.join(base, cname)
        files = sorted(f for f in os.listdir(cdir) if f.lower().endswith(IMAGE_EXTENSIONS))
        for fname in files:
            with Image.open(os.path.join(cdir, fname)) as im:
                im = im.convert("RGB")
                if im.size != (width, height):
                    im = im.resize((width, height), Image.BILINEAR)
                images.append(np.asarray(im, dtype=np.float32) / 255.0)
            labels.append(label)
    if not images:
        raise FileNotFoundError(f"class directories under {base} contain no image files")
    return LabeledDataset(np.stack(images), np.asarray(labels), num_classes,
                          name=f"class-dirs:{split}")


def _detect_layout(root: str) -> str:
    names = os.listdir(root)
    if any(n.endswith(".bin") for n in names):
        return "cifar-binary"
    if any(os.path.isdir(os.path.join(root, n)) for n in names):
        return "class-dirs"
    raise ValueError(
        f"{root}: unrecognized dataset layout; expected CIFAR-style binary "
        f"batches (data_batch_*.bin / test_batch.bin) or a directory-per-class "
        f"image tree"
    )


def ingest_dataset(descriptor: DatasetDescriptor, split: str = "train") -> LabeledDataset:
    """Load a dataset split from disk per the descriptor.

    Synthetic corpora (``name: synth``) are generated instead of read;
    see ``synth.labeled_corpus``.
    """
    if split not in ("train", "test"):
        raise ValueError(f"unknown split {split!r}")
    if descriptor.name == "synth":
        from . import synth

        per_class = (descriptor.synth_train_per_class if split == "train"
                     else descriptor.synth_test_per_class)
        seed_offset = 0 if split == "train" else 1
        ds = synth.labeled_corpus(
            per_class, num_classes=descriptor.num_classes,
            height=descriptor.image_shape[0], width=descriptor.image_shape[1],
            seed=1000 + seed_offset,
        )
    else:
        root = descriptor.root
        if not root or not os.path.isdir(root):
            raise FileNotFoundError(f"dataset root {root!r} does not exist")
        if not os.listdir(root):
            raise ValueError(f"dataset root {root} is empty")
        layout = descriptor.layout
        if layout == "auto":
            layout = _detect_layout(root)
        if layout == "cifar-binary":
            ds = _read_cifar_binary(root, split, descriptor.image_shape, descriptor.num_classes)
        elif layout == "class-dirs":
            ds = _read_class_dirs(root, split, descriptor.image_shape, descriptor.num_classes)
        else:
            raise ValueError(
                f"unknown layout {layout!r}; supported: cifar-binary (binary "
                f"batch files) and class-dirs (directory-per-class image tree)"
            )
    if descriptor.subset_per_class:
        ds = ds.subset_per_class(descriptor.subset_per_class)
    return ds
