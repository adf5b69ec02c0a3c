"""Dual model replacement attacker.

On an attack round the attacker fuses the pre-trained backdoor vector R
with the current global model, X_R = R + alpha * G, and uploads a delta
scaled so aggregation pulls the global model toward X_R: with beta equal
to M / eta and idle honest peers, replacement is exact.  Between attack
rounds the attacker contributes a zero delta (it never trains locally).
"""

import logging
from dataclasses import dataclass

import numpy as np

from .federation import LocalUpdate

log = logging.getLogger(__name__)

UPLOAD_FORMS = ("scaled-step", "literal")


@dataclass
class AttackConfig:
    alpha: float = 0.2
    beta: float = 6.0
    attack_interval: int = 0
    attacker_ids: tuple = (0,)
    upload_form: str = "scaled-step"
    pretrained_model_path: str = ""

    def __post_init__(self):
        self.attacker_ids = tuple(int(i) for i in self.attacker_ids)
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.attack_interval < 0:
            raise ValueError("attack_interval must be non-negative")
        if not self.attacker_ids:
            raise ValueError("attacker_ids must not be empty")
        if self.upload_form not in UPLOAD_FORMS:
            raise ValueError(f"upload_form must be one of {UPLOAD_FORMS}")


def _check_lengths(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"parameter vectors differ in shape: {a.shape} vs {b.shape}")


def fuse(r: np.ndarray, global_vector: np.ndarray, alpha: float) -> np.ndarray:
    """Backdoor fusion X_R = R + alpha * G."""
    r = np.asarray(r, dtype=np.float64)
    g = np.asarray(global_vector, dtype=np.float64)
    _check_lengths(r, g)
    return r + alpha * g


def craft_upload(x_r: np.ndarray, global_vector: np.ndarray, beta: float,
                 participant_id: int = 0, form: str = "scaled-step") -> LocalUpdate:
    """Scale the fused model into an aggregation-dominating update.

    The default form uploads delta = beta * (X_R - G), which makes
    replacement exact at beta = M / eta.  The "literal" form instead
    reports the simplified local model beta * (X_R - G) itself, whose
    delta therefore carries an extra -G term.
    """
    x_r = np.asarray(x_r, dtype=np.float64)
    g = np.asarray(global_vector, dtype=np.float64)
    _check_lengths(x_r, g)
    if beta <= 0:
        raise ValueError("beta must be positive")
    step = beta * (x_r - g)
    delta = step if form == "scaled-step" else step - g
    return LocalUpdate(int(participant_id), delta, 0)


class ReplacementAttacker:
    """Participant that substitutes crafted updates for local training."""

    is_attacker = True

    def __init__(self, participant_id: int, r_vector: np.ndarray, config: AttackConfig):
        self.participant_id = int(participant_id)
        self.r_vector = np.asarray(r_vector, dtype=np.float64)
        self.config = config

    def is_active(self, round_idx: int) -> bool:
        return round_idx % (self.config.attack_interval + 1) == 0

    def produce_update(self, global_vector: np.ndarray, round_idx: int, lr=None,
                       local_epochs=None) -> LocalUpdate:
        if not self.is_active(round_idx):
            return LocalUpdate(self.participant_id, np.zeros_like(global_vector), 0)
        x_r = fuse(self.r_vector, global_vector, self.config.alpha)
        return craft_upload(x_r, global_vector, self.config.beta,
                            participant_id=self.participant_id,
                            form=self.config.upload_form)


class ReplacementAttack:
    """Attack plugin for the federation: one shared R, one or more seats."""

    def __init__(self, config: AttackConfig, r_vector: np.ndarray):
        self.config = config
        self.r_vector = np.asarray(r_vector, dtype=np.float64)

    def attacker_ids(self):
        return self.config.attacker_ids

    def make_participant(self, participant_id: int) -> ReplacementAttacker:
        return ReplacementAttacker(participant_id, self.r_vector, self.config)

    def validate(self, fed_config, global_length: int):
        """Startup checks: seat validity, R shape, beta sanity."""
        for pid in self.config.attacker_ids:
            if not 0 <= pid < fed_config.num_participants:
                raise ValueError(
                    f"attacker id {pid} outside participant range 0..{fed_config.num_participants - 1}"
                )
        if self.r_vector.ndim != 1 or len(self.r_vector) != global_length:
            raise ValueError(
                f"pretrained model has {self.r_vector.size} parameters, "
                f"global model has {global_length}"
            )
        if self.config.beta > fed_config.num_participants:
            log.warning(
                "beta %.3g exceeds the participant count %d; aggregation will "
                "overshoot the fused model",
                self.config.beta, fed_config.num_participants,
            )
