import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlcsc.experiments import load_fixture
from mlcsc.metrics import PSNR_CAP, nrmse, rmse_psnr, ssim


def test_rmse_psnr_examples(rng):
    x = rng.random((4, 5))
    assert rmse_psnr(x, x) == (0.0, PSNR_CAP)
    r, _ = rmse_psnr([0.0, 0.0], [3.0, 4.0])
    assert r == pytest.approx(np.sqrt(12.5), abs=1e-12)
    img = rng.random((16, 16)) * 0.9
    r, p = rmse_psnr(img, img + 0.1)
    assert r == pytest.approx(0.1, abs=1e-12)
    assert p == pytest.approx(20.0, abs=1e-9)
    with pytest.raises(ValueError):
        rmse_psnr(np.zeros(3), np.zeros(4))


def test_psnr_strictly_decreasing_in_rmse(rng):
    x = rng.random((8, 8))
    psnrs = [rmse_psnr(x, x + e)[1] for e in (1e-3, 1e-2, 0.05, 0.1, 0.5)]
    assert all(a > b for a, b in zip(psnrs, psnrs[1:]))


def test_ssim_identity_and_contrast_inversion(rng):
    x = load_fixture("coffee_0")
    assert abs(ssim(x, x) - 1.0) < 1e-12
    board = np.kron((np.indices((8, 8)).sum(axis=0) % 2).astype(float), np.ones((4, 4)))
    assert ssim(board, 1.0 - board) < 0.1


def test_ssim_monotone_in_noise():
    x = load_fixture("astronaut_1")
    rng = np.random.default_rng(0)
    noise = rng.standard_normal(x.shape)
    values = [ssim(x, x + s * noise) for s in (0.01, 0.03, 0.1, 0.2, 0.4)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_ssim_matches_reference_implementation(rng):
    skm = pytest.importorskip("skimage.metrics")
    a = rng.random((32, 40))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    ref = skm.structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-9)


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 20)), np.zeros((10, 20)))


def test_nrmse_examples(rng):
    t = rng.standard_normal((3, 50))
    assert nrmse(t, t) == 0.0
    assert nrmse(2 * t, t) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(ValueError):
        nrmse(t, np.zeros_like(t))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(-100, 100).filter(lambda c: abs(c) > 1e-3))
def test_nrmse_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    p, t = rng.standard_normal((2, 3, 20))
    assert nrmse(c * p, c * t) == pytest.approx(nrmse(p, t), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_metrics_total_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((2, 3, 12, 12))
    r, p = rmse_psnr(a, b)
    s = ssim(a, b)
    assert r >= 0 and np.isfinite(p) and -1 <= s <= 1
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
