"""Image classifiers, their training loop, and backdoor pretraining.

Training is momentum SGD under a two-phase learning-rate schedule with
per-epoch checkpoint selection on a held-out metric.  The backdoor
model R trains on the poisoned set and is selected by average
per-trigger attack success (benign accuracy breaks ties).
"""

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import metrics
from .data import LabeledDataset
from .params import assign_state, flatten_state

log = logging.getLogger(__name__)


@dataclass
class ClassifierSpec:
    architecture: str = "small_cnn"  # or "resnet18"
    num_classes: int = 10
    input_shape: tuple = (32, 32, 3)

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.architecture not in ("small_cnn", "resnet18"):
            raise ValueError(f"unknown architecture {self.architecture!r}")


AUGMENT_MODES = ("none", "crop", "flip+crop")


def normalize_augment(value) -> str:
    """Map config booleans onto augment mode names, validate the rest."""
    if isinstance(value, bool):
        return "flip+crop" if value else "none"
    if value not in AUGMENT_MODES:
        raise ValueError(f"augment must be one of {AUGMENT_MODES}, got {value!r}")
    return value


@dataclass
class TrainSchedule:
    epochs: int = 30
    lr_initial: float = 0.01
    lr_drop_epoch: int = 18
    lr_after: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    batch_size: int = 128
    augment: str = "flip+crop"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not 0 < self.lr_after <= self.lr_initial:
            raise ValueError("need 0 < lr_after <= lr_initial")
        if self.lr_drop_epoch > self.epochs:
            raise ValueError("lr_drop_epoch must not exceed epochs")
        self.augment = normalize_augment(self.augment)

    def lr_at(self, epoch: int) -> float:
        return self.lr_initial if epoch < self.lr_drop_epoch else self.lr_after


class SmallCnn(nn.Module):
    """Compact conv net for small square images.

    Group normalization with bias-free convolutions and a bias-free head
    makes the predicted class invariant to any uniform positive rescaling
    of the full parameter vector: each norm layer cancels the incoming
    scale, so logits scale by a constant and the argmax is unchanged.  A
    federated global model therefore stays functional when an overscaled
    replacement upload inflates every weight by the same factor.  (Batch
    statistics would also average poorly across federated shards.)
    """

    def __init__(self, num_classes: int, channels: int = 3, side: int = 32):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(channels, 32, 3, padding=1, bias=False), nn.GroupNorm(8, 32), nn.ReLU(inplace=True),
            nn.Conv2d(32, 32, 3, padding=1, bias=False), nn.GroupNorm(8, 32), nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(32, 64, 3, padding=1, bias=False), nn.GroupNorm(8, 64), nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(64, 64, 3, padding=1, bias=False), nn.GroupNorm(8, 64), nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
        )
        self.head = nn.Linear(64 * (side // 8) * (side // 8), num_classes, bias=False)

    def forward(self, x):
        return self.head(self.features(x).flatten(1))


class _BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.norm1 = nn.GroupNorm(8, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.norm2 = nn.GroupNorm(8, cout)
        self.shortcut = nn.Sequential()
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False), nn.GroupNorm(8, cout)
            )

    def forward(self, x):
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class ResNet18(nn.Module):
    """Residual CNN sized for 32x32 inputs (3x3 stem, no initial pool).

    Group-normalized and bias-free like SmallCnn, for the same scale
    invariance and shard-averaging reasons.
    """

    def __init__(self, num_classes: int, channels: int = 3):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(channels, 64, 3, padding=1, bias=False), nn.GroupNorm(8, 64), nn.ReLU(inplace=True)
        )
        stages = []
        cin = 64
        for cout, stride in ((64, 1), (128, 2), (256, 2), (512, 2)):
            stages.append(_BasicBlock(cin, cout, stride))
            stages.append(_BasicBlock(cout, cout, 1))
            cin = cout
        self.stages = nn.Sequential(*stages)
        self.head = nn.Linear(512, num_classes, bias=False)

    def forward(self, x):
        out = self.stages(self.stem(x))
        out = F.adaptive_avg_pool2d(out, 1).flatten(1)
        return self.head(out)


def build_classifier(spec: ClassifierSpec) -> nn.Module:
    height, width, channels = spec.input_shape
    if spec.architecture == "small_cnn":
        if height != width or height % 8:
            raise ValueError("small_cnn expects square inputs with side divisible by 8")
        return SmallCnn(spec.num_classes, channels, height)
    return ResNet18(spec.num_classes, channels)


def materialize(spec: ClassifierSpec, vector: np.ndarray) -> nn.Module:
    """Rebuild an eval-mode model from a flat parameter vector."""
    model = build_classifier(spec)
    assign_state(model, vector)
    model.eval()
    return model


def _augment_batch(x: torch.Tensor, rng: np.random.Generator, mode: str) -> torch.Tensor:
    """Pad-4 random crop, with a random horizontal flip in flip+crop mode.

    Flips are unsafe for training sets whose labels depend on left/right
    image position (they would mirror a left-half trigger onto the right),
    so crop-only is available as its own mode.
    """
    n, _, height, width = x.shape
    if mode == "flip+crop":
        flips = np.flatnonzero(rng.random(n) < 0.5)
        if len(flips):
            idx = torch.from_numpy(flips)
            x[idx] = torch.flip(x[idx], dims=(3,))
    padded = F.pad(x, (4, 4, 4, 4))
    oy = rng.integers(0, 9, size=n)
    ox = rng.integers(0, 9, size=n)
    out = torch.empty_like(x)
    for i in range(n):
        out[i] = padded[i, :, oy[i] : oy[i] + height, ox[i] : ox[i] + width]
    return out


def sgd_epochs(model: nn.Module, dataset: LabeledDataset, epochs: int, lr: float,
               momentum: float, weight_decay: float, batch_size: int,
               rng: np.random.Generator, augment: str = "flip+crop") -> float:
    """Run plain SGD epochs in place; returns the final mean epoch loss."""
    data = torch.from_numpy(np.ascontiguousarray(dataset.images.transpose(0, 3, 1, 2)))
    labels = torch.from_numpy(dataset.labels)
    opt = torch.optim.SGD(model.parameters(), lr=lr, momentum=momentum,
                          weight_decay=weight_decay)
    loss_fn = nn.CrossEntropyLoss()
    model.train()
    mean_loss = 0.0
    for _ in range(epochs):
        order = rng.permutation(len(dataset))
        total, count = 0.0, 0
        for i in range(0, len(order), batch_size):
            idx = torch.from_numpy(order[i : i + batch_size])
            x = data[idx].clone()
            if augment != "none":
                x = _augment_batch(x, rng, augment)
            opt.zero_grad()
            loss = loss_fn(model(x), labels[idx])
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
            count += len(idx)
        mean_loss = total / max(count, 1)
    return mean_loss


def _train_accuracy(model: nn.Module, dataset: LabeledDataset) -> float:
    return metrics.ba(model, dataset)


def train_classifier(dataset: LabeledDataset, spec: ClassifierSpec,
                     schedule: TrainSchedule, selection_set=None,
                     selection_metric=None):
    """Train a classifier; returns (best parameter vector, history).

    ``selection_set`` (a LabeledDataset) scores each epoch by accuracy;
    alternatively ``selection_metric`` is a callable(model) returning a
    comparable value (use tuples for tie-breaking).  Without either, the
    final epoch wins.  Seeded and reproducible.
    """
    if len(dataset) == 0:
        raise ValueError("training set is empty")
    if dataset.labels.max() >= spec.num_classes:
        raise ValueError("dataset labels exceed the classifier's class count")
    torch.manual_seed(schedule.seed)
    rng = np.random.default_rng(schedule.seed)
    model = build_classifier(spec)

    if selection_metric is None and selection_set is not None:
        selection_metric = lambda m: metrics.ba(m, selection_set)

    best_vector = None
    best_score = None
    history = []
    for epoch in range(schedule.epochs):
        lr = schedule.lr_at(epoch)
        loss = sgd_epochs(model, dataset, 1, lr, schedule.momentum,
                          schedule.weight_decay, schedule.batch_size, rng,
                          augment=schedule.augment)
        record = {"epoch": epoch, "lr": lr, "loss": loss,
                  "accuracy": _train_accuracy(model, dataset)}
        if selection_metric is not None:
            score = selection_metric(model)
            record["selection"] = score
            if best_score is None or score > best_score:
                best_score = score
                best_vector = flatten_state(model)
        history.append(record)
        log.info("classifier epoch %d: lr %.4g loss %.4f acc %.4f%s",
                 epoch, lr, loss, record["accuracy"],
                 f" sel {record.get('selection')}" if "selection" in record else "")
    if best_vector is None:
        best_vector = flatten_state(model)
    return best_vector, history


CHECKPOINT_KIND = "classifier"


def save_classifier(path, spec: ClassifierSpec, vector: np.ndarray):
    """Persist a parameter vector with its architecture identity."""
    from . import checkpoint as ckpt

    model = materialize(spec, vector)
    ckpt.save_module(path, CHECKPOINT_KIND, model, spec.input_shape, extra={
        "architecture": spec.architecture,
        "num_classes": spec.num_classes,
    })


def load_classifier(path):
    """Load a classifier checkpoint; returns (spec, parameter vector)."""
    from . import checkpoint as ckpt

    header, tensors = ckpt.load_checkpoint(path, expect_kind=CHECKPOINT_KIND)
    spec = ClassifierSpec(
        architecture=header["extra"]["architecture"],
        num_classes=header["extra"]["num_classes"],
        input_shape=(header["height"], header["width"], header["channels"]),
    )
    model = build_classifier(spec)
    ckpt.load_module_state(model, tensors)
    return spec, flatten_state(model)


def pretrain_backdoor(poison, spec: ClassifierSpec, schedule: TrainSchedule,
                      poison_test, clean_test=None):
    """Train the backdoor model R on a poisoned set.

    Checkpoint selection maximizes mean per-trigger attack success on
    ``poison_test``; benign accuracy on ``clean_test`` breaks ties when
    provided.  Returns (parameter vector of R, history).
    """
    merged = poison.merged()

    def score(model):
        rates = metrics.asr(model, poison_test)
        mean_asr = float(np.mean(list(rates.values())))
        tiebreak = metrics.ba(model, clean_test) if clean_test is not None else 0.0
        return (mean_asr, tiebreak)

    return train_classifier(merged, spec, schedule, selection_metric=score)
