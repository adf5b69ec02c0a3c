"""Synchronous federated averaging simulator.

Each round the server sends the global parameter vector to the selected
participants, collects one delta per participant, and applies
G <- G + (eta / M) * sum(deltas) in fixed participant-id order.  The
protocol is attack-agnostic: any participant object with a
``produce_update`` method can join.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from . import metrics
from .classifier import build_classifier, materialize, normalize_augment, sgd_epochs
from .data import LabeledDataset
from .params import flatten_state

log = logging.getLogger(__name__)


class RoundError(RuntimeError):
    """A participant failed mid-round; the round is abandoned whole."""


@dataclass
class FederationConfig:
    num_participants: int = 10
    participants_per_round: int = 0  # 0 means everyone
    global_rounds: int = 35
    local_epochs: int = 4
    server_lr: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_participants < 1:
            raise ValueError("num_participants must be positive")
        if self.participants_per_round == 0:
            self.participants_per_round = self.num_participants
        if not 1 <= self.participants_per_round <= self.num_participants:
            raise ValueError("need 1 <= participants_per_round <= num_participants")
        if self.server_lr <= 0:
            raise ValueError("server_lr must be positive")
        if self.global_rounds < 1:
            raise ValueError("global_rounds must be at least 1")


@dataclass
class LocalUpdate:
    participant_id: int
    delta: np.ndarray
    sample_count: int


@dataclass
class RoundLog:
    round: int
    ba: float
    asr: dict
    update_norms: list  # [participant_id, norm] pairs in id order
    attacker_active: bool

    def to_record(self) -> dict:
        return {
            "round": self.round,
            "ba": self.ba,
            "asr_s1": self.asr.get("s1"),
            "asr_s2": self.asr.get("s2"),
            "asr_cb": self.asr.get("cb"),
            "attacker_active": self.attacker_active,
            "update_norms": [[int(pid), float(norm)] for pid, norm in self.update_norms],
        }


def partition_data(dataset: LabeledDataset, num_participants: int, seed: int):
    """Seeded shuffle into equal-size (within 1) disjoint shards."""
    if num_participants <= 0:
        raise ValueError("num_participants must be positive")
    if len(dataset) < num_participants:
        raise ValueError(
            f"{len(dataset)} samples cannot cover {num_participants} participants"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    return [dataset.take(np.sort(part)) for part in np.array_split(order, num_participants)]


def aggregate(global_vector: np.ndarray, updates, eta: float, num_participants: int) -> np.ndarray:
    """G + (eta / M) * sum of deltas, summed in participant-id order."""
    global_vector = np.asarray(global_vector)
    total = np.zeros_like(global_vector)
    for update in sorted(updates, key=lambda u: u.participant_id):
        delta = np.asarray(update.delta)
        if delta.shape != global_vector.shape:
            raise ValueError(
                f"participant {update.participant_id}: delta shape {delta.shape} "
                f"does not match global {global_vector.shape}"
            )
        total = total + delta
    return global_vector + (eta / float(num_participants)) * total


class HonestParticipant:
    """Runs local SGD epochs on its shard and reports the delta."""

    is_attacker = False

    def __init__(self, participant_id: int, shard: LabeledDataset, spec,
                 momentum: float = 0.9, weight_decay: float = 5e-4,
                 batch_size: int = 64, augment: str = "flip+crop", seed: int = 0):
        self.participant_id = int(participant_id)
        self.shard = shard
        self.spec = spec
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.augment = normalize_augment(augment)
        self.seed = seed

    def produce_update(self, global_vector: np.ndarray, round_idx: int, lr: float,
                       local_epochs: int) -> LocalUpdate:
        model = materialize(self.spec, global_vector)
        rng = np.random.default_rng((self.seed, self.participant_id, round_idx))
        sgd_epochs(model, self.shard, local_epochs, lr, self.momentum,
                   self.weight_decay, self.batch_size, rng, augment=self.augment)
        delta = flatten_state(model) - global_vector
        return LocalUpdate(self.participant_id, delta, len(self.shard))


class Evaluator:
    """Scores a global vector: benign accuracy + per-trigger attack success."""

    def __init__(self, spec, clean_test: LabeledDataset, poison_test=None,
                 batch_size: int = 512):
        self.spec = spec
        self.clean_test = clean_test
        self.poison_test = poison_test
        self.batch_size = batch_size

    def evaluate(self, vector: np.ndarray):
        model = materialize(self.spec, vector)
        ba = metrics.ba(model, self.clean_test, batch_size=self.batch_size)
        asr = (metrics.asr(model, self.poison_test, batch_size=self.batch_size)
               if self.poison_test is not None else {})
        return ba, asr


def _select_participants(config: FederationConfig, round_idx: int):
    if config.participants_per_round == config.num_participants:
        return list(range(config.num_participants))
    rng = np.random.default_rng((config.seed, 0x5E1EC7, round_idx))
    chosen = rng.choice(config.num_participants, size=config.participants_per_round,
                        replace=False)
    return sorted(int(c) for c in chosen)


def run_round(global_vector: np.ndarray, participants, config: FederationConfig,
              evaluator: Evaluator, round_idx: int, lr: float):
    """One synchronous round; returns (new global, RoundLog)."""
    selected_ids = _select_participants(config, round_idx)
    updates = []
    attacker_active = False
    for pid in selected_ids:
        participant = participants[pid]
        try:
            update = participant.produce_update(global_vector, round_idx, lr,
                                                config.local_epochs)
        except Exception as exc:
            raise RoundError(
                f"participant {pid} failed in round {round_idx}: {exc}"
            ) from exc
        updates.append(update)
        if participant.is_attacker and participant.is_active(round_idx):
            attacker_active = True
    new_global = aggregate(global_vector, updates, config.server_lr,
                           config.num_participants)
    ba, asr = evaluator.evaluate(new_global)
    norms = [(u.participant_id, float(np.linalg.norm(u.delta)))
             for u in sorted(updates, key=lambda u: u.participant_id)]
    return new_global, RoundLog(round_idx, ba, asr, norms, attacker_active)


def run_federation(train: LabeledDataset, config: FederationConfig, spec,
                   schedule, evaluator: Evaluator, attack=None):
    """Run the full federation; returns (best global vector, round logs).

    Honest participants follow the two-phase learning-rate schedule
    with the drop counted in global rounds.  The retained checkpoint
    maximizes mean per-trigger attack success with benign accuracy as
    tie-break when an attack (or poison evaluator) is present, plain
    benign accuracy otherwise.
    """
    shards = partition_data(train, config.num_participants, config.seed)
    torch.manual_seed(config.seed)
    global_vector = flatten_state(build_classifier(spec))

    attacker_ids = set()
    if attack is not None:
        attack.validate(config, len(global_vector))
        attacker_ids = set(attack.attacker_ids())

    participants = []
    for pid in range(config.num_participants):
        if pid in attacker_ids:
            participants.append(attack.make_participant(pid))
        else:
            participants.append(HonestParticipant(
                pid, shards[pid], spec,
                momentum=schedule.momentum, weight_decay=schedule.weight_decay,
                batch_size=schedule.batch_size, augment=schedule.augment,
                seed=config.seed,
            ))

    select_by_asr = attack is not None and evaluator.poison_test is not None
    best_vector = global_vector
    best_score = None
    logs = []
    for round_idx in range(config.global_rounds):
        lr = schedule.lr_at(round_idx)
        global_vector, round_log = run_round(global_vector, participants, config,
                                             evaluator, round_idx, lr)
        logs.append(round_log)
        if select_by_asr:
            score = (float(np.mean(list(round_log.asr.values()))), round_log.ba)
        else:
            score = round_log.ba
        if best_score is None or score > best_score:
            best_score = score
            best_vector = global_vector
        log.info("round %d: ba %.4f asr %s lr %.4g", round_idx, round_log.ba,
                 {k: round(v, 4) for k, v in round_log.asr.items()}, lr)
    return best_vector, logs
