import math

import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view
from hypothesis import given, settings
from hypothesis import strategies as st

from ifa_vfi.errors import ShapeError
from ifa_vfi.tensor_core import Tensor
from ifa_vfi.training.metrics import (
    PSNR_IDENTICAL,
    interpolation_error,
    psnr,
    ssim,
    ssim_sigma,
    ssim_window_size,
)


def scalar_psnr(a, b):
    values = [(x - y) ** 2 for x, y in zip(a.ravel().tolist(), b.ravel().tolist())]
    return 10.0 * math.log10(1.0 / (sum(values) / len(values)))


def scalar_ie(a, b):
    values = [(255.0 * (x - y)) ** 2 for x, y in zip(a.ravel().tolist(), b.ravel().tolist())]
    return math.sqrt(sum(values) / len(values))


def scalar_ssim(a, b):
    """逐窗口逐像素求加权统计量"""
    ga, gb = a.mean(axis=0), b.mean(axis=0)
    h, w = ga.shape
    size = ssim_window_size(h, w)
    sigma = ssim_sigma(size)
    center = (size - 1) / 2.0
    weights = [[math.exp(-((i - center) ** 2 + (j - center) ** 2) / (2 * sigma ** 2)) for j in range(size)] for i in range(size)]
    total_w = sum(sum(row) for row in weights)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    scores = []
    for y in range(h - size + 1):
        for x in range(w - size + 1):
            mu_a = mu_b = saa = sbb = sab = 0.0
            for i in range(size):
                for j in range(size):
                    wt = weights[i][j] / total_w
                    pa, pb = ga[y + i, x + j], gb[y + i, x + j]
                    mu_a += wt * pa
                    mu_b += wt * pb
                    saa += wt * pa * pa
                    sbb += wt * pb * pb
                    sab += wt * pa * pb
            var_a, var_b, cov = saa - mu_a ** 2, sbb - mu_b ** 2, sab - mu_a * mu_b
            scores.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return sum(scores) / len(scores)


def windowed_ssim(a, b):
    """11×11 高斯窗，valid 位置，批内平均"""
    ga, gb = a.mean(axis=1), b.mean(axis=1)
    coords = np.arange(11, dtype=np.float64) - 5.0
    g = np.exp(-(coords ** 2) / (2.0 * 1.5 ** 2))
    g /= g.sum()
    win = np.outer(g, g)
    pa = sliding_window_view(ga, (11, 11), axis=(1, 2))
    pb = sliding_window_view(gb, (11, 11), axis=(1, 2))
    mu_a = np.einsum("nhwij,ij->nhw", pa, win)
    mu_b = np.einsum("nhwij,ij->nhw", pb, win)
    var_a = np.einsum("nhwij,ij->nhw", pa * pa, win) - mu_a ** 2
    var_b = np.einsum("nhwij,ij->nhw", pb * pb, win) - mu_b ** 2
    cov = np.einsum("nhwij,ij->nhw", pa * pb, win) - mu_a * mu_b
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    smap = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(smap.mean(axis=(1, 2)).mean())


def test_psnr_uniform_difference():
    a = np.full((3, 8, 8), 0.5)
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-6)


def test_psnr_identical():
    a = np.random.default_rng(0).uniform(0, 1, (1, 3, 8, 8))
    assert psnr(a, a) == PSNR_IDENTICAL == math.inf


def test_interpolation_error_two_levels():
    a = np.full((3, 8, 8), 0.25)
    assert interpolation_error(a, a + 2.0 / 255.0) == pytest.approx(2.0, abs=1e-9)


def test_ssim_identical():
    a = np.random.default_rng(1).uniform(0, 1, (3, 16, 16))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-6)


def test_accepts_tensors():
    a = np.random.default_rng(2).uniform(0, 1, (1, 3, 8, 8))
    b = np.random.default_rng(3).uniform(0, 1, (1, 3, 8, 8))
    assert psnr(Tensor(a), Tensor(b)) == pytest.approx(psnr(a, b))
    assert ssim(Tensor(a), Tensor(b)) == pytest.approx(ssim(a, b))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_metrics_match_scalar_oracles(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, (3, 8, 8))
    b = rng.uniform(0, 1, (3, 8, 8))
    assert psnr(a, b) == pytest.approx(scalar_psnr(a, b), abs=1e-5)
    assert interpolation_error(a, b) == pytest.approx(scalar_ie(a, b), abs=1e-5)
    assert ssim(a, b) == pytest.approx(scalar_ssim(a, b), abs=1e-5)


@pytest.mark.parametrize("h, w, expected", [(64, 64, 11), (8, 8, 7), (10, 12, 9), (3, 40, 3)])
def test_ssim_window_size(h, w, expected):
    assert ssim_window_size(h, w) == expected


def test_ssim_sigma_keeps_full_window_default():
    assert ssim_sigma(11) == pytest.approx(1.5)
    # skimage 的高斯核半径 int(3.5σ + 0.5) 与窗口半径一致
    for size in (3, 5, 7, 9, 11):
        assert int(3.5 * ssim_sigma(size) + 0.5) == (size - 1) // 2


def test_ssim_matches_windowed_numpy_oracle():
    rng = np.random.default_rng(5)
    a = rng.uniform(0, 1, (2, 3, 24, 20))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(windowed_ssim(a, b), abs=1e-6)


def test_ssim_anticorrelated_binary_image():
    a = (np.random.default_rng(6).uniform(0, 1, (3, 16, 16)) > 0.5).astype(np.float64)
    assert ssim(a, 1.0 - a) < -0.5


def test_psnr_homogeneous_in_peak():
    rng = np.random.default_rng(7)
    a, b = rng.uniform(0, 1, (3, 8, 8)), rng.uniform(0, 1, (3, 8, 8))
    assert psnr(0.5 * a, 0.5 * b, peak=0.5) == pytest.approx(psnr(a, b))


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))
