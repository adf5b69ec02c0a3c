"""Image-quality and attack metrics against brute-force and recorded oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsteg.metrics import linf, psnr, quality_report, residual, ssim

# Recorded once from scikit-image 0.25.2 structural_similarity with
# win_size=11, uniform weights, data_range=1.0 on the seeded pairs
# generated below.  Regenerating:
#   skimage.metrics.structural_similarity(a, b, data_range=1.0, win_size=11)
SSIM_GRAY_FIXTURE = 0.98912230357629349  # seed 20260817, 16x16, sigma 0.05
SSIM_COLOR_FIXTURE = 0.96603493194600054  # seed 77, 16x16x3, sigma 0.08


def _brute_mse(a, b):
    total = 0.0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        total += (x - y) ** 2
    return total / a.size


def test_psnr_identical_images_capped():
    img = np.random.default_rng(0).random((8, 8, 3))
    assert psnr(img, img) == 100.0


def test_psnr_known_mse():
    # MSE 650.25 against the 8-bit peak: 10*log10(65025/650.25) = 20 dB
    a = np.zeros((10, 10))
    b = np.full((10, 10), np.sqrt(650.25))
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)


def test_psnr_matches_brute_force():
    rng = np.random.default_rng(1)
    a = rng.random((8, 8)) * 255
    b = rng.random((8, 8)) * 255
    expected = 10.0 * np.log10(255.0**2 / _brute_mse(a, b))
    assert psnr(a, b) == pytest.approx(expected, abs=1e-9)


def test_psnr_bit_depth():
    a = np.zeros((4, 4))
    b = np.full((4, 4), 0.5)
    expected = 10.0 * np.log10(1.0 / 0.25)
    assert psnr(a, b, bit_depth=1) == pytest.approx(expected, abs=1e-9)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


def test_ssim_identity_exact():
    img = np.random.default_rng(2).random((16, 16))
    assert ssim(img, img, 1.0) == 1.0


def test_ssim_gray_fixture():
    rng = np.random.default_rng(20260817)
    a = rng.random((16, 16))
    b = np.clip(a + rng.normal(0.0, 0.05, a.shape), 0.0, 1.0)
    assert ssim(a, b, 1.0) == pytest.approx(SSIM_GRAY_FIXTURE, abs=1e-4)


def test_ssim_color_fixture():
    rng = np.random.default_rng(77)
    a = rng.random((16, 16, 3))
    b = np.clip(a + rng.normal(0.0, 0.08, a.shape), 0.0, 1.0)
    assert ssim(a, b, 1.0) == pytest.approx(SSIM_COLOR_FIXTURE, abs=1e-4)


def test_ssim_symmetric_and_bounded():
    rng = np.random.default_rng(5)
    a = np.full((16, 16), 0.2)
    b = np.full((16, 16), 0.8)
    s1, s2 = ssim(a, b, 1.0), ssim(b, a, 1.0)
    assert s1 == pytest.approx(s2, abs=1e-12)
    assert s1 < 1.0
    x = rng.random((16, 16))
    y = rng.random((16, 16))
    assert -1.0 <= ssim(x, y, 1.0) <= 1.0


def test_ssim_rejects_bad_inputs():
    img = np.zeros((16, 16))
    with pytest.raises(ValueError):
        ssim(img, img, 0.0)
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)), 1.0)  # smaller than window
    with pytest.raises(ValueError):
        ssim(img, np.zeros((16, 17)), 1.0)


def test_linf_exact_and_zero_iff_equal():
    rng = np.random.default_rng(6)
    a = rng.random((8, 8, 3))
    b = a.copy()
    assert linf(a, b) == 0.0
    b[3, 4, 1] += 0.25
    assert linf(a, b) == pytest.approx(0.25, abs=0)
    brute = max(abs(x - y) for x, y in zip(a.ravel().tolist(), b.ravel().tolist()))
    assert linf(a, b) == brute


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_linf_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((6, 6))
    b = rng.random((6, 6))
    brute = max(abs(x - y) for x, y in zip(a.ravel().tolist(), b.ravel().tolist()))
    assert linf(a, b) == brute


def test_residual_amplifies_and_clips():
    cover = np.zeros((4, 4, 3))
    stego = np.full((4, 4, 3), 0.05)
    out = residual(cover, stego, gain=10.0)
    assert np.allclose(out, 0.5)
    out2 = residual(cover, np.full((4, 4, 3), 0.5), gain=10.0)
    assert np.allclose(out2, 1.0)  # clipped at the display ceiling


def test_quality_report_scales_to_bit_depth():
    rng = np.random.default_rng(7)
    covers = rng.random((3, 16, 16, 3))
    stegos = np.clip(covers + rng.normal(0, 0.01, covers.shape), 0, 1)
    rep = quality_report(covers, stegos)
    assert rep.sample_count == 3
    expected_psnr = np.mean([psnr(c * 255, s * 255) for c, s in zip(covers, stegos)])
    assert rep.psnr == pytest.approx(expected_psnr, abs=1e-9)
    expected_linf = np.mean([linf(c * 255, s * 255) for c, s in zip(covers, stegos)])
    assert rep.linf == pytest.approx(expected_linf, abs=1e-9)
    assert 0.0 < rep.ssim <= 1.0


def test_quality_report_rejects_bad_batches():
    with pytest.raises(ValueError):
        quality_report(np.zeros((0, 8, 8, 3)), np.zeros((0, 8, 8, 3)))
    with pytest.raises(ValueError):
        quality_report(np.zeros((2, 8, 8, 3)), np.zeros((3, 8, 8, 3)))
