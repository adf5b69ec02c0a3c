"""Encoder / decoder / critic trio for steganographic trigger generation.

Every block is a 3x3 convolution + feature normalization + ReLU + a
channel-then-spatial attention stage.  The encoder and decoder chain
three blocks densely (each later stage sees all earlier feature maps;
the encoder additionally re-reads the payload plane at every stage) and
finish with a plain output convolution.  With 3-channel images and 32
feature channels the stage input widths are 3/33/65/97 for the encoder,
3/32/64/96 for the decoder, and 3/32/32/32 for the critic.
"""

import numpy as np
import torch
import torch.nn as nn

from .cbam import ChannelSpatialAttention
from . import checkpoint as ckpt


class TrojanBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, reduction: int = 8):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1)
        self.norm = nn.BatchNorm2d(out_channels)
        self.act = nn.ReLU(inplace=True)
        self.attention = ChannelSpatialAttention(out_channels, reduction=reduction)

    def forward(self, x):
        return self.attention(self.act(self.norm(self.conv(x))))


class StegoEncoder(nn.Module):
    """Maps (cover, payload plane) to a residual image."""

    def __init__(self, channels: int = 3, hidden: int = 32, reduction: int = 8):
        super().__init__()
        self.b1 = TrojanBlock(channels, hidden, reduction)
        self.b2 = TrojanBlock(hidden + 1, hidden, reduction)
        self.b3 = TrojanBlock(2 * hidden + 1, hidden, reduction)
        self.out = nn.Conv2d(3 * hidden + 1, channels, kernel_size=3, padding=1)

    def forward(self, cover, payload):
        f1 = self.b1(cover)
        f2 = self.b2(torch.cat([f1, payload], dim=1))
        f3 = self.b3(torch.cat([f1, f2, payload], dim=1))
        return self.out(torch.cat([f1, f2, f3, payload], dim=1))


class StegoDecoder(nn.Module):
    """Maps a stego image to per-pixel bit logits."""

    def __init__(self, channels: int = 3, hidden: int = 32, reduction: int = 8):
        super().__init__()
        self.b1 = TrojanBlock(channels, hidden, reduction)
        self.b2 = TrojanBlock(hidden, hidden, reduction)
        self.b3 = TrojanBlock(2 * hidden, hidden, reduction)
        self.out = nn.Conv2d(3 * hidden, 1, kernel_size=3, padding=1)

    def forward(self, stego):
        f1 = self.b1(stego)
        f2 = self.b2(f1)
        f3 = self.b3(torch.cat([f1, f2], dim=1))
        return self.out(torch.cat([f1, f2, f3], dim=1))


class StegoCritic(nn.Module):
    """Scores image realism; one scalar per image."""

    def __init__(self, channels: int = 3, hidden: int = 32, reduction: int = 8):
        super().__init__()
        self.b1 = TrojanBlock(channels, hidden, reduction)
        self.b2 = TrojanBlock(hidden, hidden, reduction)
        self.b3 = TrojanBlock(hidden, hidden, reduction)
        self.out = nn.Conv2d(hidden, 1, kernel_size=3, padding=1)

    def forward(self, image):
        return self.out(self.b3(self.b2(self.b1(image)))).mean(dim=(1, 2, 3))


class StegoSystem:
    """Bundles the three networks with their image geometry.

    Public ``encode`` / ``decode`` / ``critic_score`` take numpy images
    shaped (H, W, C) or (N, H, W, C) in ``clip_range`` and run the
    networks frozen in eval mode; training uses the tensor-level hooks.
    """

    CHECKPOINT_KIND = "stego"

    def __init__(self, height: int, width: int, channels: int = 3, hidden: int = 32,
                 clip_range=(0.0, 1.0), reduction: int = 8, seed=None):
        if seed is not None:
            torch.manual_seed(seed)
        self.height = int(height)
        self.width = int(width)
        self.channels = int(channels)
        self.hidden = int(hidden)
        self.reduction = int(reduction)
        self.clip_range = (float(clip_range[0]), float(clip_range[1]))
        self.encoder = StegoEncoder(channels, hidden, reduction)
        self.decoder = StegoDecoder(channels, hidden, reduction)
        self.critic = StegoCritic(channels, hidden, reduction)

    # ---- tensor-level paths (shared by training and inference) ----

    def encode_t(self, cover: torch.Tensor, payload: torch.Tensor) -> torch.Tensor:
        """Differentiable stego forward: cover + residual, clipped."""
        lo, hi = self.clip_range
        return torch.clamp(cover + self.encoder(cover, payload), lo, hi)

    def decode_probs_t(self, stego: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.decoder(stego))

    # ---- numpy <-> tensor plumbing ----

    def _images_to_tensor(self, images, check_range=True):
        arr = np.asarray(images, dtype=np.float32)
        single = arr.ndim == 3
        if single:
            arr = arr[None]
        if arr.ndim != 4 or arr.shape[-1] != self.channels:
            raise ValueError(
                f"expected (H, W, {self.channels}) or (N, H, W, {self.channels}) images, got {arr.shape}"
            )
        if not np.isfinite(arr).all():
            raise ValueError("image batch contains non-finite values")
        if check_range:
            lo, hi = self.clip_range
            if arr.min() < lo - 1e-5 or arr.max() > hi + 1e-5:
                raise ValueError(f"image values outside clip range [{lo}, {hi}]")
        t = torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))
        return t, single

    def _payload_to_tensor(self, payload, spatial_shape, batch: int):
        arr = np.asarray(payload)
        if arr.ndim == 2:
            arr = np.broadcast_to(arr, (batch,) + arr.shape)
        if arr.shape != (batch,) + spatial_shape:
            raise ValueError(
                f"payload shape {np.asarray(payload).shape} does not match image spatial shape {spatial_shape}"
            )
        return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))[:, None]

    def eval_mode(self):
        self.encoder.eval()
        self.decoder.eval()
        self.critic.eval()

    def train_mode(self):
        self.encoder.train()
        self.decoder.train()
        self.critic.train()

    # ---- public inference API ----

    def encode(self, cover, payload) -> np.ndarray:
        """Hide a bit plane in a cover image; output shape equals input."""
        x, single = self._images_to_tensor(cover)
        m = self._payload_to_tensor(payload, tuple(x.shape[2:]), x.shape[0])
        self.eval_mode()
        with torch.no_grad():
            stego = self.encode_t(x, m)
        out = stego.numpy().transpose(0, 2, 3, 1)
        return out[0] if single else out

    def decode(self, stego) -> np.ndarray:
        """Recover the hard bit plane; probabilities above 0.5 become 1."""
        x, single = self._images_to_tensor(stego)
        self.eval_mode()
        with torch.no_grad():
            probs = self.decode_probs_t(x)
        bits = (probs[:, 0] > 0.5).numpy().astype(np.uint8)
        return bits[0] if single else bits

    def critic_score(self, image):
        """Realism score; a single real per image, any batch size."""
        x, single = self._images_to_tensor(image, check_range=False)
        self.eval_mode()
        with torch.no_grad():
            scores = self.critic(x).numpy()
        return float(scores[0]) if single else scores

    # ---- persistence ----

    def save(self, path):
        tensors = {}
        for prefix, module in (("encoder", self.encoder), ("decoder", self.decoder), ("critic", self.critic)):
            for name, arr in ckpt.module_state_arrays(module).items():
                tensors[f"{prefix}.{name}"] = arr
        extra = {
            "hidden": self.hidden,
            "reduction": self.reduction,
            "clip_range": list(self.clip_range),
        }
        ckpt.save_checkpoint(path, self.CHECKPOINT_KIND, tensors,
                             (self.height, self.width, self.channels), extra=extra)

    @classmethod
    def load(cls, path) -> "StegoSystem":
        header, tensors = ckpt.load_checkpoint(path, expect_kind=cls.CHECKPOINT_KIND)
        extra = header["extra"]
        system = cls(
            header["height"], header["width"], header["channels"],
            hidden=extra["hidden"], clip_range=tuple(extra["clip_range"]),
            reduction=extra.get("reduction", 8),
        )
        for prefix, module in (("encoder", system.encoder), ("decoder", system.decoder), ("critic", system.critic)):
            state = {
                name[len(prefix) + 1:]: arr
                for name, arr in tensors.items()
                if name.startswith(prefix + ".")
            }
            ckpt.load_module_state(module, state)
        system.eval_mode()
        return system
