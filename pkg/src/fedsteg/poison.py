"""Combination-trigger poisoning.

Images are split into column halves; the three trigger kinds re-encode
the left half (s1), the right half (s2), or both halves independently
(cb), each kind mapped to its own target label.  A poison dataset is
the disjoint union of the three triggered subsets plus the untouched
remainder, with per-sample provenance.
"""

from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset
from .payload import expand_message

TRIGGER_KINDS = ("s1", "s2", "cb")


@dataclass
class PoisonPlan:
    message: str = "goldfish"
    targets: tuple = (0, 1, 2)  # target labels for s1 / s2 / cb
    rate_per_subset: float = 1.0 / 30.0
    seed: int = 0
    test_fraction: float = 0.5

    def __post_init__(self):
        self.targets = tuple(int(t) for t in self.targets)
        if len(self.targets) != 3:
            raise ValueError("targets must list exactly three labels (s1, s2, cb)")
        if not self.message:
            raise ValueError("message must be non-empty")
        if not 0.0 <= self.rate_per_subset <= 1.0 / 3.0:
            raise ValueError("rate_per_subset must lie in [0, 1/3]")
        if not 0.0 <= self.test_fraction <= 1.0:
            raise ValueError("test_fraction must lie in [0, 1]")

    def target_of(self, kind: str) -> int:
        return self.targets[TRIGGER_KINDS.index(kind)]


@dataclass
class TriggeredSubset:
    trigger: str  # s1 | s2 | cb | none
    images: np.ndarray
    labels: np.ndarray  # assigned labels (targets; originals for "none")
    origin_index: np.ndarray
    original_labels: np.ndarray

    def __len__(self):
        return len(self.images)


@dataclass
class PoisonDataset:
    s1: TriggeredSubset
    s2: TriggeredSubset
    cb: TriggeredSubset
    remain: TriggeredSubset
    num_classes: int
    plan: PoisonPlan

    def trigger_subsets(self) -> dict:
        return {"s1": self.s1, "s2": self.s2, "cb": self.cb}

    def parts(self) -> dict:
        return {"s1": self.s1, "s2": self.s2, "cb": self.cb, "none": self.remain}

    def merged(self) -> LabeledDataset:
        """Training view: remainder plus all triggered subsets."""
        order = [self.remain, self.s1, self.s2, self.cb]
        images = np.concatenate([p.images for p in order])
        labels = np.concatenate([p.labels for p in order])
        return LabeledDataset(images, labels, self.num_classes, name="poisoned")


def split_regions(image: np.ndarray):
    """Split into left/right column halves at floor(W/2)."""
    image = np.asarray(image)
    width = image.shape[1]
    if width < 2:
        raise ValueError(f"image width {width} < 2 cannot be split")
    half = width // 2
    return image[:, :half], image[:, half:]


def merge_regions(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    return np.concatenate([left, right], axis=1)


def _encode_batch(encoder, halves: np.ndarray, payload_half: np.ndarray) -> np.ndarray:
    # eval-mode batched encode keeps per-sample results order-stable
    return encoder.encode(halves, payload_half)


def make_poison_sample(image: np.ndarray, trigger: str, encoder, payload: np.ndarray,
                       target: int, original_label: int):
    """Apply one trigger to one image; returns (image, assigned label)."""
    if trigger not in TRIGGER_KINDS:
        raise ValueError(f"unknown trigger {trigger!r}")
    if int(target) == int(original_label):
        raise ValueError(f"target {target} equals the sample's original label")
    left, right = split_regions(image)
    pl, pr = split_regions(payload)
    if trigger == "s1":
        out = merge_regions(encoder.encode(left, pl), right)
    elif trigger == "s2":
        out = merge_regions(left, encoder.encode(right, pr))
    else:
        out = merge_regions(encoder.encode(left, pl), encoder.encode(right, pr))
    return out, int(target)


def _subset_quotas(size: int, eligible: np.ndarray, counts_by_class: dict, rng) -> dict:
    """Equal per-class quotas (within 1) over the eligible classes."""
    k = len(eligible)
    base, rem = divmod(size, k)
    bonus = set(rng.permutation(eligible)[:rem].tolist())
    quotas = {}
    for c in eligible:
        q = base + (1 if c in bonus else 0)
        if q > counts_by_class.get(int(c), 0):
            raise ValueError(
                f"class {c} has {counts_by_class.get(int(c), 0)} free samples, quota needs {q}"
            )
        quotas[int(c)] = q
    return quotas


def _draw_subsets(labels: np.ndarray, num_classes: int, sizes: dict, targets: dict, rng):
    """Seeded disjoint per-subset index draws honoring target != label."""
    free = {c: list(np.flatnonzero(labels == c)) for c in range(num_classes)}
    picks = {}
    for kind in TRIGGER_KINDS:
        target = targets[kind]
        eligible = np.array([c for c in range(num_classes) if c != target])
        counts = {c: len(free[c]) for c in range(num_classes)}
        quotas = _subset_quotas(sizes[kind], eligible, counts, rng)
        chosen = []
        for c in sorted(quotas):
            pool = np.array(free[c])
            take = rng.choice(pool, size=quotas[c], replace=False)
            taken = set(take.tolist())
            free[c] = [i for i in free[c] if i not in taken]
            chosen.append(take)
        picks[kind] = np.sort(np.concatenate(chosen)) if chosen else np.zeros(0, dtype=np.int64)
    return picks


def _build_triggered(dataset: LabeledDataset, indices: np.ndarray, kind: str,
                     encoder, payload_plane: np.ndarray, target: int) -> TriggeredSubset:
    if len(indices) == 0:
        empty = np.zeros((0,) + dataset.image_shape, dtype=np.float32)
        zl = np.zeros(0, dtype=np.int64)
        return TriggeredSubset(kind, empty, zl, zl.copy(), zl.copy())
    images = dataset.images[indices]
    half = dataset.image_shape[1] // 2
    left = images[:, :, :half, :]
    right = images[:, :, half:, :]
    pl = payload_plane[:, :half]
    pr = payload_plane[:, half:]
    if kind in ("s1", "cb"):
        left = _encode_batch(encoder, left, pl)
    if kind in ("s2", "cb"):
        right = _encode_batch(encoder, right, pr)
    out = np.concatenate([left, right], axis=2)
    labels = np.full(len(indices), target, dtype=np.int64)
    return TriggeredSubset(kind, out, labels, indices.astype(np.int64),
                           dataset.labels[indices].copy())


def _assemble(dataset: LabeledDataset, plan: PoisonPlan, encoder, sizes: dict,
              with_remain: bool) -> PoisonDataset:
    if dataset.num_classes < 2:
        raise ValueError("poisoning needs at least 2 classes")
    for t in plan.targets:
        if not 0 <= t < dataset.num_classes:
            raise ValueError(f"target label {t} out of range")
    height, width = dataset.image_shape[0], dataset.image_shape[1]
    payload_plane = expand_message(plan.message, height, width).astype(np.float32)

    rng = np.random.default_rng(plan.seed)
    targets = dict(zip(TRIGGER_KINDS, plan.targets))
    picks = _draw_subsets(dataset.labels, dataset.num_classes, sizes, targets, rng)

    subsets = {
        kind: _build_triggered(dataset, picks[kind], kind, encoder, payload_plane, targets[kind])
        for kind in TRIGGER_KINDS
    }
    used = np.concatenate([picks[k] for k in TRIGGER_KINDS])
    if with_remain:
        mask = np.ones(len(dataset), dtype=bool)
        mask[used] = False
        rest = np.flatnonzero(mask)
    else:
        rest = np.zeros(0, dtype=np.int64)
    remain = TriggeredSubset(
        "none", dataset.images[rest], dataset.labels[rest].copy(),
        rest.astype(np.int64), dataset.labels[rest].copy(),
    )
    return PoisonDataset(subsets["s1"], subsets["s2"], subsets["cb"], remain,
                         dataset.num_classes, plan)


def build_poison_dataset(train: LabeledDataset, plan: PoisonPlan, encoder) -> PoisonDataset:
    """Poison a training set per the plan; the rest passes through untouched."""
    if len(train) == 0:
        raise ValueError("training set is empty")
    per_subset = int(round(plan.rate_per_subset * len(train)))
    if 3 * per_subset > len(train):
        raise ValueError(
            f"plan requests {3 * per_subset} poison samples from {len(train)} available"
        )
    sizes = {kind: per_subset for kind in TRIGGER_KINDS}
    return _assemble(train, plan, encoder, sizes, with_remain=True)


def build_poison_testset(test: LabeledDataset, plan: PoisonPlan, encoder) -> PoisonDataset:
    """Triggered evaluation set: a fraction of the test split, three ways.

    No remainder is kept, and (by the draw construction) no sample's
    original label equals its subset's target.
    """
    if len(test) == 0:
        raise ValueError("test set is empty")
    total = int(round(plan.test_fraction * len(test)))
    base, rem = divmod(total, 3)
    sizes = {kind: base + (1 if i < rem else 0) for i, kind in enumerate(TRIGGER_KINDS)}
    return _assemble(test, plan, encoder, sizes, with_remain=False)


def write_poison_manifest(path, poison: PoisonDataset):
    """One TSV record per sample: origin, trigger, original and assigned label."""
    rows = []
    for kind, part in poison.parts().items():
        for origin, orig_label, assigned in zip(part.origin_index, part.original_labels, part.labels):
            rows.append((int(origin), kind, int(orig_label), int(assigned)))
    rows.sort()
    with open(path, "w") as f:
        f.write("origin_index\ttrigger\toriginal_label\tassigned_label\n")
        for origin, kind, orig_label, assigned in rows:
            f.write(f"{origin}\t{kind}\t{orig_label}\t{assigned}\n")


def read_poison_manifest(path):
    rows = []
    with open(path) as f:
        header = f.readline()
        for line in f:
            origin, kind, orig_label, assigned = line.rstrip("\n").split("\t")
            rows.append((int(origin), kind, int(orig_label), int(assigned)))
    return rows
