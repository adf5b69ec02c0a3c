"""Frozen perceptual feature extractor for the stego training loss.

The reference choice is a pre-trained VGG-style evaluator; at desk
scale a small convolutional stack trained once as an autoencoder on the
stego corpus stands in, selected by ``StegoTrainConfig.feature_source``.
"""

import numpy as np
import torch
import torch.nn as nn


class FeatureStack(nn.Module):
    """Convolutional feature pyramid; ``forward`` returns a list of maps.

    Each tap carries a fixed gain, calibrated once so the corpus-level
    feature RMS per layer is 1; without this the raw activations are so
    small that the perceptual distance cannot balance the other loss
    terms.
    """

    def __init__(self, channels: int = 3, hidden: int = 16):
        super().__init__()
        self.e1 = nn.Sequential(nn.Conv2d(channels, hidden, 3, padding=1), nn.ReLU(inplace=True))
        self.e2 = nn.Sequential(nn.Conv2d(hidden, 2 * hidden, 3, padding=1, stride=2), nn.ReLU(inplace=True))
        self.e3 = nn.Sequential(nn.Conv2d(2 * hidden, 2 * hidden, 3, padding=1), nn.ReLU(inplace=True))
        self.register_buffer("gains", torch.ones(2))

    def forward(self, x):
        f1 = self.e1(x)
        f3 = self.e3(self.e2(f1))
        return [self.gains[0] * f1, self.gains[1] * f3]

    @torch.no_grad()
    def calibrate(self, images: torch.Tensor, gain: float = 1.0, batch_size: int = 64):
        """Set per-layer gains to ``gain`` / feature RMS over a (N,C,H,W) batch."""
        sq_sums = torch.zeros(2, dtype=torch.float64)
        counts = torch.zeros(2, dtype=torch.float64)
        self.gains.fill_(1.0)
        for i in range(0, len(images), batch_size):
            for k, fmap in enumerate(self.forward(images[i : i + batch_size])):
                sq_sums[k] += (fmap.double() ** 2).sum()
                counts[k] += fmap.numel()
        rms = torch.sqrt(sq_sums / counts.clamp(min=1)).float()
        self.gains.copy_(gain / rms.clamp(min=1e-8))


class _FeatureAutoencoder(nn.Module):
    def __init__(self, channels: int = 3, hidden: int = 16):
        super().__init__()
        self.features = FeatureStack(channels, hidden)
        self.head = nn.Sequential(
            nn.ConvTranspose2d(2 * hidden, hidden, 4, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, channels, 3, padding=1),
        )

    def forward(self, x):
        return self.head(self.features(x)[-1])


def train_feature_stack(images: np.ndarray, seed: int = 0, epochs: int = 2,
                        batch_size: int = 64, hidden: int = 16,
                        gain: float = 1.0) -> FeatureStack:
    """Train a small reconstruction autoencoder and freeze its encoder."""
    if len(images) == 0:
        raise ValueError("feature corpus is empty")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    channels = images.shape[-1]
    model = _FeatureAutoencoder(channels, hidden)
    opt = torch.optim.Adam(model.parameters(), lr=1e-3)
    loss_fn = nn.MSELoss()
    data = np.ascontiguousarray(images.transpose(0, 3, 1, 2), dtype=np.float32)
    model.train()
    for _ in range(epochs):
        order = rng.permutation(len(data))
        for i in range(0, len(order), batch_size):
            x = torch.from_numpy(data[order[i : i + batch_size]])
            opt.zero_grad()
            loss = loss_fn(model(x), x)
            loss.backward()
            opt.step()
    stack = model.features
    stack.eval()
    stack.calibrate(torch.from_numpy(data), gain=gain)
    for p in stack.parameters():
        p.requires_grad_(False)
    return stack


def vgg_feature_stack():
    """Pre-trained VGG16 relu1_2/relu3_3 features, when torchvision can load them."""
    try:
        from torchvision.models import vgg16, VGG16_Weights
        backbone = vgg16(weights=VGG16_Weights.IMAGENET1K_V1).features
    except Exception as exc:  # missing torchvision or no weights available offline
        raise RuntimeError(
            "VGG16 feature weights are unavailable in this environment; "
            "use feature_source='train' to fit the small local stack instead"
        ) from exc

    class _VggFeatures(nn.Module):
        def __init__(self, feats):
            super().__init__()
            self.low = feats[:4]
            self.mid = feats[4:16]

        def forward(self, x):
            f1 = self.low(x)
            return [f1, self.mid(f1)]

    stack = _VggFeatures(backbone)
    stack.eval()
    for p in stack.parameters():
        p.requires_grad_(False)
    return stack
