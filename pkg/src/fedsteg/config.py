"""Experiment configuration: schema, validation, YAML loading.

One YAML document drives every CLI command.  Unknown keys and bad
values fail validation with field-path messages before any output is
written.  The global ``seed`` seeds every submodule unless a section
overrides it explicitly.
"""

import copy
import os
from dataclasses import dataclass

import yaml

from .attack import AttackConfig
from .classifier import ClassifierSpec, TrainSchedule
from .data import DatasetDescriptor
from .federation import FederationConfig
from .poison import PoisonPlan
from .stego_train import StegoTrainConfig


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))


DEFAULTS = {
    "seed": 7,
    "output_dir": "runs/experiment",
    "dataset": {
        "name": "synth",
        "root": "",
        "num_classes": 10,
        "image_shape": [32, 32, 3],
        "subset_per_class": 0,
        "layout": "auto",
        "synth_train_per_class": 500,
        "synth_test_per_class": 100,
    },
    "stego": {
        "learning_rate": 1e-4,
        "decode_weight": 10.0,
        "epochs": 8,
        "batch_size": 4,
        "hidden": 32,
        "clip_range": [0.0, 1.0],
        "critic_clip": 0.01,
        "feature_source": "train",
        "feature_hidden": 16,
        "feature_epochs": 4,
        "feature_gain": 12.0,
        "payload_chars": 8,
        "corpus_size": 2000,
        "holdout_size": 500,
        "checkpoint": "",
    },
    "poison": {
        "message": "goldfish",
        "targets": [0, 1, 2],
        "rate_per_subset": 1.0 / 30.0,
        "test_fraction": 0.5,
    },
    "classifier": {
        "architecture": "small_cnn",
    },
    "pretrain": {
        "epochs": 30,
        "lr_initial": 0.01,
        "lr_drop_epoch": 18,
        "lr_after": 0.001,
        "momentum": 0.9,
        "weight_decay": 5e-4,
        "batch_size": 128,
        # crop only: flips would mirror the left/right trigger regions of
        # the poisoned training set onto each other
        "augment": "crop",
    },
    "federation": {
        "num_participants": 5,
        "participants_per_round": 0,
        "global_rounds": 15,
        "local_epochs": 2,
        "server_lr": 1.0,
    },
    "local": {
        "lr_initial": 0.01,
        "lr_drop_round": 8,
        "lr_after": 0.001,
        "momentum": 0.9,
        "weight_decay": 5e-4,
        "batch_size": 64,
        "augment": "flip+crop",
    },
    "attack": {
        "enabled": True,
        "alpha": 0.2,
        "beta": 6.0,
        "attack_interval": 0,
        "attacker_ids": [0],
        "upload_form": "scaled-step",
        "pretrained_model_path": "",
    },
}


@dataclass
class ExperimentConfig:
    seed: int
    output_dir: str
    dataset: DatasetDescriptor
    stego: StegoTrainConfig
    stego_corpus_size: int
    stego_holdout_size: int
    stego_checkpoint: str
    poison: PoisonPlan
    classifier: ClassifierSpec
    pretrain: TrainSchedule
    federation: FederationConfig
    local: TrainSchedule
    attack_enabled: bool
    attack: AttackConfig
    resolved: dict


def _merge(defaults, override, path, errors):
    out = copy.deepcopy(defaults)
    if override is None:
        return out
    if not isinstance(override, dict):
        errors.append(f"{path or 'config'}: expected a mapping")
        return out
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            errors.append(f"{where}: unknown field")
            continue
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value, where, errors)
        else:
            out[key] = value
    return out


def _build(section, factory, errors, **kwargs):
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as exc:
        errors.append(f"{section}: {exc}")
        return None


def build_experiment(raw: dict) -> ExperimentConfig:
    """Validate a raw config mapping and construct all module configs."""
    errors = []
    resolved = _merge(DEFAULTS, raw, "", errors)
    if errors:
        raise ConfigError(errors)

    seed = resolved["seed"]
    if not isinstance(seed, int):
        errors.append("seed: must be an integer")
        seed = 0

    d = resolved["dataset"]
    dataset = _build("dataset", DatasetDescriptor, errors,
                     name=d["name"], root=d["root"], num_classes=d["num_classes"],
                     image_shape=tuple(d["image_shape"]),
                     subset_per_class=d["subset_per_class"], layout=d["layout"],
                     synth_train_per_class=d["synth_train_per_class"],
                     synth_test_per_class=d["synth_test_per_class"])
    if dataset is not None and dataset.name != "synth":
        if not dataset.root:
            errors.append("dataset.root: required unless dataset.name is 'synth'")
        elif not os.path.isdir(dataset.root):
            errors.append(f"dataset.root: path {dataset.root!r} does not exist")

    s = resolved["stego"]
    stego = _build("stego", StegoTrainConfig, errors,
                   learning_rate=s["learning_rate"], decode_weight=s["decode_weight"],
                   epochs=s["epochs"], clip_range=tuple(s["clip_range"]), seed=seed,
                   batch_size=s["batch_size"], hidden=s["hidden"],
                   critic_clip=s["critic_clip"], feature_source=s["feature_source"],
                   feature_hidden=s["feature_hidden"], feature_epochs=s["feature_epochs"],
                   feature_gain=s["feature_gain"],
                   payload_chars=s["payload_chars"])
    # checkpoint existence is checked by the commands that read it, since
    # earlier pipeline stages are what create the file in the first place

    p = resolved["poison"]
    plan = _build("poison", PoisonPlan, errors,
                  message=p["message"], targets=tuple(p["targets"]),
                  rate_per_subset=p["rate_per_subset"],
                  test_fraction=p["test_fraction"], seed=seed)
    if plan is not None and dataset is not None:
        for t in plan.targets:
            if not 0 <= t < dataset.num_classes:
                errors.append(f"poison.targets: label {t} out of range for {dataset.num_classes} classes")

    c = resolved["classifier"]
    shape = tuple(resolved["dataset"]["image_shape"])
    spec = _build("classifier", ClassifierSpec, errors,
                  architecture=c["architecture"],
                  num_classes=resolved["dataset"]["num_classes"], input_shape=shape)

    pt = resolved["pretrain"]
    pretrain = _build("pretrain", TrainSchedule, errors,
                      epochs=pt["epochs"], lr_initial=pt["lr_initial"],
                      lr_drop_epoch=pt["lr_drop_epoch"], lr_after=pt["lr_after"],
                      momentum=pt["momentum"], weight_decay=pt["weight_decay"],
                      seed=seed, batch_size=pt["batch_size"], augment=pt["augment"])

    f = resolved["federation"]
    federation = _build("federation", FederationConfig, errors,
                        num_participants=f["num_participants"],
                        participants_per_round=f["participants_per_round"],
                        global_rounds=f["global_rounds"],
                        local_epochs=f["local_epochs"],
                        server_lr=f["server_lr"], seed=seed)

    lo = resolved["local"]
    local = None
    if federation is not None:
        local = _build("local", TrainSchedule, errors,
                       epochs=federation.global_rounds, lr_initial=lo["lr_initial"],
                       lr_drop_epoch=lo["lr_drop_round"], lr_after=lo["lr_after"],
                       momentum=lo["momentum"], weight_decay=lo["weight_decay"],
                       seed=seed, batch_size=lo["batch_size"], augment=lo["augment"])

    a = resolved["attack"]
    attack = _build("attack", AttackConfig, errors,
                    alpha=a["alpha"], beta=a["beta"],
                    attack_interval=a["attack_interval"],
                    attacker_ids=tuple(a["attacker_ids"]),
                    upload_form=a["upload_form"],
                    pretrained_model_path=a["pretrained_model_path"])
    if attack is not None and federation is not None:
        for pid in attack.attacker_ids:
            if not 0 <= pid < federation.num_participants:
                errors.append(f"attack.attacker_ids: id {pid} outside 0..{federation.num_participants - 1}")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        seed=seed, output_dir=resolved["output_dir"], dataset=dataset,
        stego=stego, stego_corpus_size=s["corpus_size"],
        stego_holdout_size=s["holdout_size"], stego_checkpoint=s["checkpoint"],
        poison=plan, classifier=spec, pretrain=pretrain, federation=federation,
        local=local, attack_enabled=bool(a["enabled"]), attack=attack,
        resolved=resolved,
    )


def load_config(path: str) -> ExperimentConfig:
    if not os.path.isfile(path):
        raise ConfigError([f"config file {path!r} does not exist"])
    with open(path) as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, dict):
        raise ConfigError(["top level: expected a mapping"])
    return build_experiment(raw)
