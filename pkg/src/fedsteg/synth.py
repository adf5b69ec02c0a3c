"""Deterministic synthetic image corpora.

Stand-ins for photographic datasets when none is on disk: a texture
corpus for stego training and a 10-class labeled corpus whose classes
differ by grating orientation, frequency, and tint, separable by a
small CNN.  Pixel values stay inside [0.05, 0.95] so the stego residual
has clipping headroom on both sides.
"""

import os

import numpy as np

from .data import LabeledDataset


def _grid(height, width):
    ys, xs = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return ys.astype(np.float64), xs.astype(np.float64)


def _squash(z: np.ndarray) -> np.ndarray:
    # map unbounded structure into [0.05, 0.95]
    return (0.5 + 0.45 * np.tanh(z)).astype(np.float32)


def texture_corpus(n: int, height: int = 32, width: int = 32, channels: int = 3,
                   seed: int = 0) -> np.ndarray:
    """(n, H, W, C) corpus of smooth random multi-wave textures."""
    rng = np.random.default_rng(seed)
    ys, xs = _grid(height, width)
    out = np.empty((n, height, width, channels), dtype=np.float32)
    for i in range(n):
        z = np.zeros((height, width, channels))
        for _ in range(rng.integers(2, 5)):
            theta = rng.uniform(0, np.pi)
            freq = rng.uniform(1.0, 4.0)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.3, 1.0, size=channels)
            wave = np.sin(2 * np.pi * freq * (xs * np.cos(theta) + ys * np.sin(theta)) / width + phase)
            z += wave[..., None] * amp
        # low-frequency blotches from upsampled noise
        coarse = rng.normal(0, 0.6, size=(4, 4, channels))
        fy, fx = -(-height // 4), -(-width // 4)
        z += np.repeat(np.repeat(coarse, fy, axis=0), fx, axis=1)[:height, :width]
        out[i] = _squash(0.6 * z)
    return out


def labeled_corpus(per_class: int, num_classes: int = 10, height: int = 32,
                   width: int = 32, seed: int = 0) -> LabeledDataset:
    """Labeled corpus; class identity = orientation + frequency + tint."""
    if per_class < 1 or num_classes < 2:
        raise ValueError("need per_class >= 1 and num_classes >= 2")
    rng = np.random.default_rng(seed)
    ys, xs = _grid(height, width)
    class_rng = np.random.default_rng(12345)
    thetas = np.pi * np.arange(num_classes) / num_classes
    freqs = 1.5 + (np.arange(num_classes) % 4)
    tints = class_rng.uniform(0.4, 1.0, size=(num_classes, 3))

    n = per_class * num_classes
    images = np.empty((n, height, width, 3), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    i = 0
    for c in range(num_classes):
        for _ in range(per_class):
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.7, 1.3)
            wave = np.sin(
                2 * np.pi * freqs[c] * (xs * np.cos(thetas[c]) + ys * np.sin(thetas[c])) / width + phase
            )
            z = amp * wave[..., None] * tints[c]
            z = z + rng.normal(0, 0.25, size=(height, width, 3))
            images[i] = _squash(0.8 * z)
            labels[i] = c
            i += 1
    # deterministic interleave so any prefix is class-balanced
    order = np.arange(n).reshape(num_classes, per_class).T.reshape(-1)
    return LabeledDataset(images[order], labels[order], num_classes, name="synth")


def write_class_dirs(dataset: LabeledDataset, root: str):
    """Write a dataset as root/class_<k>/<i>.png."""
    from PIL import Image

    os.makedirs(root, exist_ok=True)
    width = len(str(max(len(dataset) - 1, 1)))
    for c in range(dataset.num_classes):
        os.makedirs(os.path.join(root, f"class_{c:02d}"), exist_ok=True)
    for i, (img, label) in enumerate(zip(dataset.images, dataset.labels)):
        pix = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
        path = os.path.join(root, f"class_{label:02d}", f"{i:0{width}d}.png")
        Image.fromarray(pix).save(path)


def write_cifar_batches(train: LabeledDataset, test: LabeledDataset, root: str):
    """Write datasets in the CIFAR-style binary batch layout."""
    os.makedirs(root, exist_ok=True)

    def _records(ds):
        pix = np.clip(np.rint(ds.images * 255.0), 0, 255).astype(np.uint8)
        planar = pix.transpose(0, 3, 1, 2).reshape(len(ds), -1)
        recs = np.concatenate([ds.labels.astype(np.uint8)[:, None], planar], axis=1)
        return recs.tobytes()

    with open(os.path.join(root, "data_batch_1.bin"), "wb") as f:
        f.write(_records(train))
    with open(os.path.join(root, "test_batch.bin"), "wb") as f:
        f.write(_records(test))
