"""Image-quality metrics, attack metrics, and residual images.

PSNR/SSIM/l-inf are reported in the units of their inputs; pass images
scaled to [0, 255] (or use ``quality_report``) for 8-bit-unit numbers.
"""

from dataclasses import dataclass

import numpy as np
import torch


def _as_float64_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, bit_depth: int = 8) -> float:
    """Peak signal-to-noise ratio in dB; zero MSE is capped at 100 dB."""
    a, b = _as_float64_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return 100.0
    peak = float(2 ** bit_depth - 1)
    return float(10.0 * np.log10(peak * peak / mse))


def _window_means(x: np.ndarray, win: int) -> np.ndarray:
    # mean over every win x win window fully inside x, via 2-D cumulative sums
    c = np.cumsum(np.cumsum(x, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    s = c[win:, win:] - c[:-win, win:] - c[win:, :-win] + c[:-win, :-win]
    return s / float(win * win)


def _ssim_single(a, b, dynamic_range, win, k1, k2):
    ux = _window_means(a, win)
    uy = _window_means(b, win)
    uxx = _window_means(a * a, win)
    uyy = _window_means(b * b, win)
    uxy = _window_means(a * b, win)
    # unbiased sample covariance over the window population
    npix = win * win
    cov_norm = npix / (npix - 1.0)
    vx = cov_norm * (uxx - ux * ux)
    vy = cov_norm * (uyy - uy * uy)
    vxy = cov_norm * (uxy - ux * uy)
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    s = ((2.0 * ux * uy + c1) * (2.0 * vxy + c2)) / (
        (ux * ux + uy * uy + c1) * (vx + vy + c2)
    )
    return float(s.mean())


def ssim(a, b, dynamic_range: float, window: int = 11, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local structural similarity.

    Uniform window weighting with the standard squared stabilizers
    C1 = (k1 R)^2, C2 = (k2 R)^2; statistics use the unbiased sample
    covariance, and only windows fully inside the image contribute.
    Multi-channel inputs average the per-channel values.
    """
    a, b = _as_float64_pair(a, b)
    if dynamic_range <= 0:
        raise ValueError("dynamic_range must be positive")
    if a.ndim == 3:
        vals = [
            _ssim_single(a[..., ch], b[..., ch], dynamic_range, window, k1, k2)
            for ch in range(a.shape[-1])
        ]
        return float(np.mean(vals))
    if a.ndim != 2:
        raise ValueError(f"expected 2-D or 3-D images, got shape {a.shape}")
    if min(a.shape[:2]) < window:
        raise ValueError(f"image {a.shape} smaller than the {window}x{window} window")
    return _ssim_single(a, b, dynamic_range, window, k1, k2)


def linf(a, b) -> float:
    """Largest absolute per-pixel difference."""
    a, b = _as_float64_pair(a, b)
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def residual(cover, stego, gain: float = 10.0, display_range=(0.0, 1.0)) -> np.ndarray:
    """Amplified absolute difference image, clipped to the display range."""
    cover, stego = _as_float64_pair(cover, stego)
    lo, hi = display_range
    return np.clip(gain * np.abs(cover - stego), lo, hi)


@dataclass
class QualityReport:
    psnr: float
    ssim: float
    linf: float
    sample_count: int


def quality_report(covers: np.ndarray, stegos: np.ndarray, bit_depth: int = 8) -> QualityReport:
    """Average PSNR/SSIM/l-inf over image pairs, in n-bit pixel units.

    Inputs are (N, H, W, C) arrays in [0, 1]; metrics are computed after
    scaling to the n-bit range so that the numbers are comparable across
    storage formats.
    """
    if covers.shape != stegos.shape:
        raise ValueError(f"shape mismatch: {covers.shape} vs {stegos.shape}")
    if covers.ndim != 4 or covers.shape[0] == 0:
        raise ValueError("expected a non-empty (N, H, W, C) batch")
    peak = float(2 ** bit_depth - 1)
    psnrs, ssims, linfs = [], [], []
    for c, s in zip(covers, stegos):
        c8 = np.asarray(c, dtype=np.float64) * peak
        s8 = np.asarray(s, dtype=np.float64) * peak
        psnrs.append(psnr(c8, s8, bit_depth=bit_depth))
        ssims.append(ssim(c8, s8, dynamic_range=peak))
        linfs.append(linf(c8, s8))
    return QualityReport(
        psnr=float(np.mean(psnrs)),
        ssim=float(np.mean(ssims)),
        linf=float(np.mean(linfs)),
        sample_count=int(covers.shape[0]),
    )


def _as_module(model) -> torch.nn.Module:
    if isinstance(model, torch.nn.Module):
        return model
    # (ParameterVector, ClassifierSpec) pair
    vector, spec = model
    from .classifier import materialize  # local import to avoid a cycle

    return materialize(spec, vector)


def predict_labels(model, images: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Top-1 predictions for an (N, H, W, C) float image batch."""
    module = _as_module(model)
    module.eval()
    preds = []
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            chunk = images[i : i + batch_size].transpose(0, 3, 1, 2)
            x = torch.from_numpy(np.ascontiguousarray(chunk, dtype=np.float32))
            preds.append(module(x).argmax(dim=1).numpy())
    if not preds:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(preds)


def asr(model, poison_test, batch_size: int = 512) -> dict:
    """Per-trigger attack success rate on a poison test set.

    For each trigger subset, the fraction of samples classified as that
    subset's target label.
    """
    out = {}
    for name, subset in poison_test.trigger_subsets().items():
        if len(subset.images) == 0:
            raise ValueError(f"poison test subset {name!r} is empty")
        preds = predict_labels(model, subset.images, batch_size=batch_size)
        out[name] = float(np.mean(preds == subset.labels))
    return out


def ba(model, clean_test, batch_size: int = 512) -> float:
    """Top-1 accuracy on a clean labeled dataset."""
    if len(clean_test.images) == 0:
        raise ValueError("clean test set is empty")
    preds = predict_labels(model, clean_test.images, batch_size=batch_size)
    return float(np.mean(preds == clean_test.labels))
