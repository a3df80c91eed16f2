import math

import numpy as np
import pytest

from colorlic import tensor as T
from colorlic.color import ciede2000, rgb_to_yuv, srgb_to_lab, yuv_to_rgb
from colorlic.errors import DimensionError, UsageError
from colorlic.metrics import (
    ciede2000_image,
    ciede2000_map_t,
    metric_report,
    ms_ssim,
    ms_ssim_db,
    ms_ssim_scales,
    ms_ssim_t,
    psnr,
    psnr_from_mse,
)
from sharma_data import SHARMA_PAIRS

# 8-bit sRGB of the classic 24-patch chart
COLORCHECKER = np.array([
    [115, 82, 68], [194, 150, 130], [98, 122, 157], [87, 108, 67], [133, 128, 177], [103, 189, 170],
    [214, 126, 44], [80, 91, 166], [193, 90, 99], [94, 60, 108], [157, 188, 64], [224, 163, 46],
    [56, 61, 150], [70, 148, 73], [175, 54, 60], [231, 199, 31], [187, 86, 149], [8, 133, 161],
    [243, 243, 242], [200, 200, 200], [160, 160, 160], [122, 122, 121], [85, 85, 85], [52, 52, 52],
]) / 255.0


def test_yuv_reference_points():
    np.testing.assert_allclose(rgb_to_yuv(np.ones((3, 1, 1)))[:, 0, 0], [1, 0, 0], atol=1e-12)
    np.testing.assert_array_equal(rgb_to_yuv(np.zeros((3, 1, 1))), 0)
    np.testing.assert_allclose(yuv_to_rgb(np.array([0.5, 0, 0]).reshape(3, 1, 1))[:, 0, 0], 0.5, atol=1e-12)


def test_yuv_ranges_and_luma_weights():
    eye = np.eye(3).reshape(3, 3, 1)
    yuv = rgb_to_yuv(eye)
    np.testing.assert_allclose(yuv[0, :, 0], [0.299, 0.587, 0.114])
    assert yuv[1:].min() >= -0.5 - 1e-12 and yuv[1:].max() <= 0.5 + 1e-12


def test_yuv_out_of_gamut_is_clamped():
    out = yuv_to_rgb(np.array([1.2, 0.5, -0.5]).reshape(3, 1, 1))
    assert out.min() >= 0 and out.max() <= 1


def test_lab_reference_points():
    np.testing.assert_allclose(srgb_to_lab([1.0, 1.0, 1.0]), [100, 0, 0], atol=0.01)
    np.testing.assert_allclose(srgb_to_lab([0.0, 0.0, 0.0]), [0, 0, 0], atol=1e-12)


def test_lab_matches_skimage_on_colorchecker():
    color = pytest.importorskip("skimage.color")
    ref = color.rgb2lab(COLORCHECKER[None], illuminant="D65", observer="2")[0]
    np.testing.assert_allclose(srgb_to_lab(COLORCHECKER), ref, atol=0.05)


def test_ciede2000_identity_and_symmetry(rng):
    a = rng.uniform([0, -80, -80], [100, 80, 80], (200, 3))
    b = rng.uniform([0, -80, -80], [100, 80, 80], (200, 3))
    assert np.all(ciede2000(a, a) == 0)
    np.testing.assert_array_equal(ciede2000(a, b), ciede2000(b, a))
    assert np.all(ciede2000(a, b) > 0)


def test_ciede2000_table_values():
    pairs = np.array(SHARMA_PAIRS)
    got = ciede2000(pairs[:, :3], pairs[:, 3:6])
    np.testing.assert_allclose(got, pairs[:, 6], atol=1e-4, rtol=0)


def test_ciede2000_matches_skimage(rng):
    color = pytest.importorskip("skimage.color")
    a = rng.uniform([0, -100, -100], [100, 100, 100], (500, 3))
    b = a + rng.normal(0, 5, a.shape)
    np.testing.assert_allclose(ciede2000(a, b), color.deltaE_ciede2000(a, b), atol=1e-8)


def test_ciede2000_image_constant_pair_reduces_to_pixel():
    x = np.ones((3, 5, 4)) * np.array([0.2, 0.5, 0.7])[:, None, None]
    y = np.ones((3, 5, 4)) * np.array([0.25, 0.45, 0.7])[:, None, None]
    single = ciede2000(srgb_to_lab(x[:, 0, 0]), srgb_to_lab(y[:, 0, 0]))
    assert ciede2000_image(x, y) == pytest.approx(np.asarray(single).item(), abs=1e-12)
    assert ciede2000_image(x, x) == 0.0


def test_ciede2000_image_matches_pixel_loop(rng):
    x, y = rng.random((3, 6, 7)), rng.random((3, 6, 7))
    loop = np.mean([ciede2000(srgb_to_lab(x[:, i, j]), srgb_to_lab(y[:, i, j])) for i in range(6) for j in range(7)])
    assert ciede2000_image(x, y) == pytest.approx(loop, abs=1e-8)
    with pytest.raises(DimensionError):
        ciede2000_image(x, y[:, :5])


def test_psnr_definitions(rng):
    x = rng.random((3, 8, 8))
    assert psnr(x, x) == math.inf
    assert psnr_from_mse(0.01) == pytest.approx(20.0)
    y = rng.random((3, 8, 8))
    assert psnr(x, y) == pytest.approx(10 * np.log10(1 / np.mean((x - y) ** 2)))


def test_ms_ssim_db_identity():
    assert ms_ssim_db(1 - 1e-2) == pytest.approx(20.0, abs=1e-12)


def test_ms_ssim_scale_count():
    assert ms_ssim_scales(256, 256) == 5
    assert ms_ssim_scales(176, 300) == 5
    assert ms_ssim_scales(175, 300) == 4
    assert ms_ssim_scales(11, 11) == 1
    with pytest.raises(UsageError):
        ms_ssim_scales(10, 64)


def test_ms_ssim_identical_is_one_and_noise_is_monotone(rng):
    x = rng.random((3, 64, 64))
    assert ms_ssim(x, x) == 1.0
    noise = np.random.default_rng(7).standard_normal(x.shape)
    scores = [ms_ssim(x, np.clip(x + a * noise, 0, 1)) for a in (0.01, 0.05, 0.1)]
    assert scores[0] > scores[1] > scores[2]


def test_ms_ssim_matches_tensorflow():
    tf = pytest.importorskip("tensorflow")
    rng = np.random.default_rng(3)
    x = rng.random((3, 256, 256))
    y = np.clip(x * 0.7 + 0.3 * rng.random((3, 256, 256)), 0, 1)
    ref = float(tf.image.ssim_multiscale(x.transpose(1, 2, 0)[None], y.transpose(1, 2, 0)[None], max_val=1.0)[0])
    assert abs(ms_ssim(x, y) - ref) < 1e-4


def test_metric_gradients_at_double_precision(rng):
    x = T.Tensor(rng.uniform(0.1, 0.9, (1, 3, 24, 24)), requires_grad=True)
    y = T.Tensor(rng.uniform(0.1, 0.9, (1, 3, 24, 24)))
    assert T.grad_check(lambda: ms_ssim_t(x, y).sum(), [x], max_coords=40) < 1e-4
    assert T.grad_check(lambda: T.mean(ciede2000_map_t(x, y)), [x], max_coords=40) < 1e-4


def test_metric_report_identities(rng):
    x, y = rng.random((3, 32, 32)), rng.random((3, 32, 32))
    r = metric_report(x, y)
    assert r.psnr == 10 * math.log10(1 / r.mse)
    assert r.ms_ssim_db == -10 * math.log10(1 - r.ms_ssim)
    tiny = metric_report(x[:, :4, :4], y[:, :4, :4])
    assert math.isnan(tiny.ms_ssim) and math.isfinite(tiny.psnr)
