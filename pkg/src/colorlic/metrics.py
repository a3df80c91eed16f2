"""Image quality metrics: MSE, PSNR, MS-SSIM and mean CIEDE2000."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .color import ciede2000_t, srgb_to_lab_t
from .errors import DimensionError, UsageError
from .nn import conv2d
from .tensor import Tensor

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03


@dataclass(frozen=True)
class MetricReport:
    mse: float
    psnr: float
    ms_ssim: float
    ms_ssim_db: float
    ciede2000: float

    def as_dict(self) -> dict:
        return asdict(self)


def _check_pair(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise DimensionError(f"image shapes differ: {x.shape} vs {y.shape}")


def mse(x: np.ndarray, y: np.ndarray) -> float:
    x, y = np.asarray(x, np.float64), np.asarray(y, np.float64)
    _check_pair(x, y)
    return float(np.mean((x - y) ** 2))


def psnr_from_mse(value: float) -> float:
    return math.inf if value == 0 else 10.0 * math.log10(1.0 / value)


def psnr(x: np.ndarray, y: np.ndarray) -> float:
    """PSNR in dB for unit-range images; ``inf`` for identical inputs."""
    return psnr_from_mse(mse(x, y))


def ms_ssim_db(value: float) -> float:
    if math.isnan(value):
        return math.nan
    return math.inf if value >= 1.0 else -10.0 * math.log10(1.0 - value)


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    return g / g.sum()


def ms_ssim_scales(height: int, width: int) -> int:
    """Number of usable scales: the coarsest one must still fit the window."""
    side = min(height, width)
    if side < WINDOW_SIZE:
        raise UsageError(f"image side {side} is smaller than the {WINDOW_SIZE}x{WINDOW_SIZE} window")
    scales = 1
    while scales < len(MS_SSIM_WEIGHTS) and side // 2**scales >= WINDOW_SIZE:
        scales += 1
    return scales


def _blur(x: Tensor, win: np.ndarray) -> Tensor:
    k = win.astype(x.dtype)
    x = conv2d(x, k.reshape(1, 1, 1, -1), None, 1, padding=0)
    return conv2d(x, k.reshape(1, 1, -1, 1), None, 1, padding=0)


def _ssim_terms(x: Tensor, y: Tensor, win: np.ndarray) -> tuple[Tensor, Tensor]:
    c1, c2 = K1**2, K2**2
    mu_x, mu_y = _blur(x, win), _blur(y, win)
    mu_xx, mu_yy, mu_xy = T.square(mu_x), T.square(mu_y), mu_x * mu_y
    var_x = _blur(T.square(x), win) - mu_xx
    var_y = _blur(T.square(y), win) - mu_yy
    cov = _blur(x * y, win) - mu_xy
    cs_map = (cov * 2.0 + c2) / (var_x + var_y + c2)
    lum_map = (mu_xy * 2.0 + c1) / (mu_xx + mu_yy + c1)
    return T.mean(lum_map * cs_map, (2, 3)), T.mean(cs_map, (2, 3))


def ms_ssim_t(x: Tensor, y: Tensor, scales: int | None = None) -> Tensor:
    """Per-image MS-SSIM of ``(B, C, H, W)`` batches, shape ``(B,)``.

    Each channel is scored separately and the channel scores are averaged.
    Negative contrast-structure terms are clipped to a tiny positive value
    before exponentiation.
    """
    if x.shape != y.shape:
        raise DimensionError(f"image shapes differ: {x.shape} vs {y.shape}")
    n, c, h, w = x.shape
    if scales is None:
        scales = ms_ssim_scales(h, w)
    weights = np.array(MS_SSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    win = gaussian_window()

    xs = T.reshape(x, (n * c, 1, h, w))
    ys = T.reshape(y, (n * c, 1, h, w))
    result = None
    for s in range(scales):
        ssim_val, cs_val = _ssim_terms(xs, ys, win)
        term = ssim_val if s == scales - 1 else cs_val
        factor = T.power(T.clamp(term, lo=1e-8), float(weights[s]))
        result = factor if result is None else result * factor
        if s < scales - 1:
            xs, ys = T.avg_pool2(xs), T.avg_pool2(ys)
    return T.mean(T.reshape(result, (n, c)), 1)


def ms_ssim(x: np.ndarray, y: np.ndarray) -> float:
    """MS-SSIM of two ``(3, H, W)`` (or ``(C, H, W)``) unit-range images."""
    x, y = np.asarray(x, np.float64), np.asarray(y, np.float64)
    _check_pair(x, y)
    if np.array_equal(x, y):
        return 1.0
    with T.no_grad():
        val = ms_ssim_t(T.Tensor(x[None]), T.Tensor(y[None]))
    return float(val.data[0])


def ciede2000_map_t(x: Tensor, y: Tensor) -> Tensor:
    """Per-pixel CIEDE2000 between RGB batches ``(B, 3, H, W)``, shape ``(B, H, W)``."""
    if x.shape != y.shape:
        raise DimensionError(f"image shapes differ: {x.shape} vs {y.shape}")
    lab_x = srgb_to_lab_t(x[:, 0], x[:, 1], x[:, 2])
    lab_y = srgb_to_lab_t(y[:, 0], y[:, 1], y[:, 2])
    return ciede2000_t(*lab_x, *lab_y)


def ciede2000_image(x: np.ndarray, y: np.ndarray) -> float:
    """Mean per-pixel CIEDE2000 between two ``(3, H, W)`` sRGB images."""
    x, y = np.asarray(x, np.float64), np.asarray(y, np.float64)
    _check_pair(x, y)
    with T.no_grad():
        d = ciede2000_map_t(T.Tensor(x[None]), T.Tensor(y[None]))
    return float(d.data.mean())


def metric_report(x: np.ndarray, y: np.ndarray) -> MetricReport:
    """All metrics at once; MS-SSIM is NaN for images smaller than its window."""
    m = mse(x, y)
    try:
        ms = ms_ssim(x, y)
    except UsageError:
        ms = math.nan
    return MetricReport(
        mse=m,
        psnr=psnr_from_mse(m),
        ms_ssim=ms,
        ms_ssim_db=ms_ssim_db(ms),
        ciede2000=ciede2000_image(x, y),
    )
