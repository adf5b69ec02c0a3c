"""Invisible multi-target backdoor attacks on federated averaging.

The package has three layers:

* steganographic trigger generation (``payload``, ``stego_models``,
  ``stego_train``): an encoder/decoder/critic trio that hides a bit
  payload in images with no visible artifact,
* combination-trigger poisoning (``poison``) and centralized backdoor
  pretraining (``classifier``),
* a federated-averaging simulator (``federation``) with a dual
  model-replacement attacker (``attack``) and the evaluation suite
  (``metrics``).
"""

__version__ = "0.1.0"

from .payload import expand_message, contract_message
from .data import LabeledDataset
from .stego_models import StegoSystem
from .stego_train import StegoTrainConfig, train_stego
from .poison import PoisonPlan, build_poison_dataset, build_poison_testset
from .classifier import ClassifierSpec, TrainSchedule, train_classifier, pretrain_backdoor
from .federation import FederationConfig, partition_data, run_federation
from .attack import AttackConfig, ReplacementAttack, ReplacementAttacker, fuse, craft_upload
from .metrics import psnr, ssim, linf, asr, ba

__all__ = [
    "__version__",
    "expand_message",
    "contract_message",
    "LabeledDataset",
    "StegoSystem",
    "StegoTrainConfig",
    "train_stego",
    "PoisonPlan",
    "build_poison_dataset",
    "build_poison_testset",
    "ClassifierSpec",
    "TrainSchedule",
    "train_classifier",
    "pretrain_backdoor",
    "FederationConfig",
    "partition_data",
    "run_federation",
    "AttackConfig",
    "ReplacementAttack",
    "ReplacementAttacker",
    "fuse",
    "craft_upload",
    "psnr",
    "ssim",
    "linf",
    "asr",
    "ba",
]
