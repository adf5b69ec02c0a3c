"""Losses and the adversarial training loop for the stego system.

Each step alternates one critic update with one encoder/decoder update.
The critic ascends the Wasserstein score gap score(cover) - score(stego)
(its training objective is the negated gap) and its weights are clipped
after every step; the encoder and decoder descend the joint loss
lambda * decode + perceptual + realism.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .features import train_feature_stack, vgg_feature_stack
from .stego_models import StegoSystem

log = logging.getLogger(__name__)

PROB_EPS = 1e-7


@dataclass
class StegoTrainConfig:
    learning_rate: float = 1e-4
    decode_weight: float = 10.0
    epochs: int = 16
    clip_range: tuple = (0.0, 1.0)
    seed: int = 0
    batch_size: int = 4
    hidden: int = 32
    critic_clip: float = 0.01
    feature_source: str = "train"  # or "vgg16"
    feature_hidden: int = 16
    feature_epochs: int = 4
    feature_gain: float = 12.0  # perceptual feature scale after RMS calibration
    payload_chars: int = 8  # training messages are random byte strings this long

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.decode_weight <= 0:
            raise ValueError("decode_weight must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.feature_source not in ("train", "vgg16"):
            raise ValueError(f"unknown feature_source {self.feature_source!r}")
        if self.feature_gain <= 0:
            raise ValueError("feature_gain must be positive")
        if self.payload_chars < 1:
            raise ValueError("payload_chars must be at least 1")


def decode_loss(predicted: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy between bit probabilities and target bits.

    Probabilities are clamped away from 0/1 by a small epsilon so the
    logs stay finite.
    """
    if predicted.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(predicted.shape)} vs {tuple(target.shape)}")
    p = predicted.clamp(PROB_EPS, 1.0 - PROB_EPS)
    t = target.to(p.dtype)
    return -(t * torch.log(p) + (1.0 - t) * torch.log(1.0 - p)).mean()


def perceptual_loss(feature_stack, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Squared feature-map distance, normalized per layer by W*H.

    For each feature layer the squared differences are summed over all
    positions and channels and divided by the layer's spatial size; the
    layer values are then averaged.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    fa = feature_stack(a)
    fb = feature_stack(b)
    total = None
    for ma, mb in zip(fa, fb):
        h, w = ma.shape[-2], ma.shape[-1]
        batch = ma.shape[0]
        term = ((ma - mb) ** 2).sum() / float(h * w * batch)
        total = term if total is None else total + term
    return total / float(len(fa))


def realism_loss(system: StegoSystem, cover: torch.Tensor, payload: torch.Tensor) -> torch.Tensor:
    """Critic score of the encoded image; gradients reach the encoder."""
    return system.critic(system.encode_t(cover, payload)).mean()


def critic_loss(system: StegoSystem, cover: torch.Tensor, payload: torch.Tensor) -> torch.Tensor:
    """Wasserstein score gap score(cover) - score(stego)."""
    stego = system.encode_t(cover, payload)
    return score_gap(system.critic(cover), system.critic(stego))


def score_gap(cover_scores: torch.Tensor, stego_scores: torch.Tensor) -> torch.Tensor:
    return cover_scores.mean() - stego_scores.mean()


def joint_loss(decode, perceptual, realism, decode_weight):
    """decode_weight * decode + perceptual + realism."""
    return decode_weight * decode + perceptual + realism


def train_stego(images: np.ndarray, config: StegoTrainConfig, feature_stack=None):
    """Adversarially train a stego system on an image corpus.

    ``images`` is (N, H, W, C) float in ``config.clip_range``.  Returns
    the final-epoch system and a per-epoch history of mean losses.
    Fully seeded: identical inputs give an identical history.
    """
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or len(images) == 0:
        raise ValueError("expected a non-empty (N, H, W, C) image corpus")
    n, height, width, channels = images.shape

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    system = StegoSystem(height, width, channels, hidden=config.hidden,
                         clip_range=config.clip_range)
    if feature_stack is None:
        if config.feature_source == "vgg16":
            feature_stack = vgg_feature_stack()
        else:
            feature_stack = train_feature_stack(
                images, seed=config.seed + 1, epochs=config.feature_epochs,
                hidden=config.feature_hidden, gain=config.feature_gain,
            )

    coder_params = list(system.encoder.parameters()) + list(system.decoder.parameters())
    opt_coder = torch.optim.Adam(coder_params, lr=config.learning_rate)
    opt_critic = torch.optim.Adam(system.critic.parameters(), lr=config.learning_rate)

    data = np.ascontiguousarray(images.transpose(0, 3, 1, 2))
    # training payloads follow the deployment codec: a short message's bits
    # tiled cyclically in row-major order across the plane
    tile = np.arange(height * width) % (8 * config.payload_chars)
    history = []
    system.train_mode()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sums = {"decode": 0.0, "perceptual": 0.0, "realism": 0.0, "critic_gap": 0.0, "joint": 0.0}
        batches = 0
        for i in range(0, n, config.batch_size):
            x = torch.from_numpy(data[order[i : i + config.batch_size]])
            words = rng.integers(0, 2, size=(x.shape[0], 8 * config.payload_chars))
            bits = words[:, tile].reshape(x.shape[0], height, width)
            m = torch.from_numpy(bits.astype(np.float32))[:, None]

            stego = system.encode_t(x, m)

            # critic step: ascend the score gap, then clip weights
            gap = score_gap(system.critic(x), system.critic(stego.detach()))
            opt_critic.zero_grad()
            (-gap).backward()
            opt_critic.step()
            with torch.no_grad():
                for p in system.critic.parameters():
                    p.clamp_(-config.critic_clip, config.critic_clip)

            # encoder/decoder step on the joint objective
            d = decode_loss(system.decode_probs_t(stego), m)
            p_loss = perceptual_loss(feature_stack, x, stego)
            r = system.critic(stego).mean()
            loss = joint_loss(d, p_loss, r, config.decode_weight)
            opt_coder.zero_grad()
            loss.backward()
            opt_coder.step()

            sums["decode"] += float(d.detach())
            sums["perceptual"] += float(p_loss.detach())
            sums["realism"] += float(r.detach())
            sums["critic_gap"] += float(gap.detach())
            sums["joint"] += float(loss.detach())
            batches += 1

        record = {"epoch": epoch}
        record.update({k: v / batches for k, v in sums.items()})
        history.append(record)
        log.info(
            "stego epoch %d: decode %.4f perceptual %.4f realism %.4f gap %.4f",
            epoch, record["decode"], record["perceptual"], record["realism"],
            record["critic_gap"],
        )
    system.eval_mode()
    return system, history
