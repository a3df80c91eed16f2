"""Likelihood models for the latents and hyperlatents.

``y`` latents are modeled as zero-mean Gaussians whose scales come from the
hyper-synthesis transform; ``z`` hyperlatents use a per-channel learned
monotone CDF (a small cascade of positive-weight linear maps with tanh
gating). Both are evaluated over unit-width bins around integers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import tensor as T
from .rangecoder import pmf_to_quantized_cdf
from .tensor import Tensor

SIGMA_FLOOR = 0.11
SCALE_TABLE_SIZE = 64
SCALE_TABLE_MAX = 64.0
TAIL_MASS = 1e-9
PRIOR_FILTERS = (3, 3, 3)
PRIOR_SEARCH_RADIUS = 256


def default_scale_table() -> np.ndarray:
    return np.exp(np.linspace(math.log(SIGMA_FLOOR), math.log(SCALE_TABLE_MAX), SCALE_TABLE_SIZE))


def gaussian_likelihood(value, sigma, tail_mass: float = TAIL_MASS, sigma_floor: float = SIGMA_FLOOR) -> Tensor:
    """Probability mass of the unit bin centered on ``value`` under N(0, sigma^2)."""
    value, sigma = T.as_tensor(value), T.as_tensor(sigma)
    sigma = T.clamp(sigma, lo=sigma_floor)
    v = T.tabs(value)
    upper = T.normal_cdf((0.5 - v) / sigma)
    lower = T.normal_cdf((-0.5 - v) / sigma)
    return T.clamp(upper - lower, lo=tail_mass)


class FactorizedPrior:
    """Per-channel learned CDF over hyperlatent values.

    Reads its weights from a parameter mapping under ``<prefix>.matrixK``,
    ``<prefix>.biasK`` and ``<prefix>.factorK``. Softplus keeps the matrices
    positive, so the cumulative logits are nondecreasing in the input.
    """

    def __init__(self, params, prefix: str, tail_mass: float = TAIL_MASS):
        self.params = params
        self.prefix = prefix
        self.tail_mass = tail_mass
        self.stages = len(PRIOR_FILTERS) + 1

    @property
    def channels(self) -> int:
        return self.params[f"{self.prefix}.matrix0"].shape[0]

    def logits_cumulative(self, v: Tensor) -> Tensor:
        """``v`` has shape ``(C, 1, N)``; returns logits of the CDF, same shape."""
        x = v
        for k in range(self.stages):
            x = T.matmul(T.softplus(self.params[f"{self.prefix}.matrix{k}"]), x)
            x = x + self.params[f"{self.prefix}.bias{k}"]
            if k < self.stages - 1:
                x = x + T.tanh(self.params[f"{self.prefix}.factor{k}"]) * T.tanh(x)
        return x

    def likelihood(self, z) -> Tensor:
        """Bin probabilities for ``z`` of shape ``(B, C, H, W)``."""
        z = T.as_tensor(z)
        n, c, h, w = z.shape
        v = T.reshape(T.transpose(z, (1, 0, 2, 3)), (c, 1, n * h * w))
        lower = self.logits_cumulative(v - 0.5)
        upper = self.logits_cumulative(v + 0.5)
        # evaluate in the tail closer to zero to avoid cancellation
        sign = -np.sign(lower.data + upper.data)
        sign[sign == 0] = 1.0
        lik = T.tabs(T.sigmoid(upper * sign) - T.sigmoid(lower * sign))
        lik = T.clamp(lik, lo=self.tail_mass)
        return T.transpose(T.reshape(lik, (c, n, h, w)), (1, 0, 2, 3))

    def cdf(self, values: np.ndarray) -> np.ndarray:
        """CDF of every channel at ``values`` (1-D), shape ``(C, len(values))``."""
        values = np.asarray(values, dtype=np.float64)
        with T.no_grad():
            v = T.Tensor(np.broadcast_to(values, (self.channels, 1, len(values))).copy())
            logits = self._logits64(v)
        return special.expit(logits.data[:, 0, :])

    def _logits64(self, v: Tensor) -> Tensor:
        x = v
        for k in range(self.stages):
            m = self.params[f"{self.prefix}.matrix{k}"].data.astype(np.float64)
            b = self.params[f"{self.prefix}.bias{k}"].data.astype(np.float64)
            x = T.matmul(T.softplus(m), x) + b
            if k < self.stages - 1:
                f = self.params[f"{self.prefix}.factor{k}"].data.astype(np.float64)
                x = x + T.tanh(T.Tensor(f)) * T.tanh(x)
        return x

    def build_tables(self, radius: int = PRIOR_SEARCH_RADIUS) -> tuple[np.ndarray, list[np.ndarray]]:
        """Per-channel integer alphabets and quantized CDFs (with escape symbol).

        Returns the lowest coded value of each channel and its CDF table.
        """
        grid = np.arange(-radius, radius + 1, dtype=np.float64)
        upper = self.cdf(grid + 0.5)
        lower = self.cdf(grid - 0.5)
        offsets = np.zeros(self.channels, dtype=np.int64)
        tables = []
        for ch in range(self.channels):
            inside = np.nonzero((upper[ch] > self.tail_mass / 2) & (lower[ch] < 1.0 - self.tail_mass / 2))[0]
            if inside.size == 0:
                lo_i = hi_i = radius
            else:
                lo_i, hi_i = int(inside[0]), int(inside[-1])
            pmf = np.clip(upper[ch, lo_i : hi_i + 1] - lower[ch, lo_i : hi_i + 1], 0.0, None)
            escape = max(1.0 - pmf.sum(), 0.0)
            offsets[ch] = int(grid[lo_i])
            tables.append(pmf_to_quantized_cdf(np.append(pmf, escape)))
        return offsets, tables


def factorized_likelihood(value: float, channel: int, prior: FactorizedPrior) -> float:
    """Probability of the integer bin at ``value`` for one channel."""
    z = np.zeros((1, prior.channels, 1, 1))
    z[0, channel, 0, 0] = value
    with T.no_grad():
        lik = prior.likelihood(T.Tensor(z))
    return float(lik.data[0, channel, 0, 0])


@dataclass
class GaussianConditional:
    """Integer CDF tables for zero-mean Gaussians at a fixed set of scales."""

    scale_table: np.ndarray = field(default_factory=default_scale_table)
    tail_mass: float = TAIL_MASS

    def __post_init__(self):
        self.scale_table = np.asarray(self.scale_table, dtype=np.float64)
        multiplier = -special.ndtri(self.tail_mass / 2)
        self.offsets = np.ceil(self.scale_table * multiplier).astype(np.int64)
        self.tables = []
        for scale, half in zip(self.scale_table, self.offsets):
            v = np.arange(-half, half + 1, dtype=np.float64)
            pmf = special.ndtr((v + 0.5) / scale) - special.ndtr((v - 0.5) / scale)
            escape = 2.0 * special.ndtr((-half - 0.5) / scale)
            self.tables.append(pmf_to_quantized_cdf(np.append(pmf, escape)))

    def indexes(self, sigma: np.ndarray) -> np.ndarray:
        """Index of the smallest table scale that is at least ``sigma``."""
        idx = np.searchsorted(self.scale_table, np.asarray(sigma, dtype=np.float64), side="left")
        return np.minimum(idx, len(self.scale_table) - 1)


@dataclass
class RateEstimate:
    total_bits: float
    latent_bits: dict[str, float]
    channel_bits: dict[str, np.ndarray]

    def bpp(self, pixels: int) -> float:
        return self.total_bits / pixels


def bits_from_likelihood(lik: np.ndarray) -> np.ndarray:
    return -np.log2(lik)


_LATENTS = (("z_L", "lum", "z"), ("z_C", "chroma", "z"), ("y_L", "lum", "y"), ("y_C", "chroma", "y"))


def estimate_rate_bits(bundle, params) -> RateEstimate:
    """Ideal code length of a latent bundle under the model's likelihoods.

    ``y`` latents use the bundle's scales; ``z`` latents use each branch's
    factorized prior (read from ``params`` under ``<branch>.prior``).
    """
    latent_bits, channel_bits = {}, {}
    with T.no_grad():
        for name, branch, kind in _LATENTS:
            values = np.asarray(bundle.latent(name), dtype=np.float64)
            if kind == "z":
                lik = FactorizedPrior(params, f"{branch}.prior").likelihood(T.Tensor(values[None])).data[0]
            else:
                sigma = np.asarray(bundle.latent("sigma_" + name[-1]), dtype=np.float64)
                lik = gaussian_likelihood(T.Tensor(values), T.Tensor(sigma)).data
            per_channel = bits_from_likelihood(lik.astype(np.float64)).reshape(lik.shape[0], -1).sum(axis=1)
            channel_bits[name] = per_channel
            latent_bits[name] = float(per_channel.sum())
    return RateEstimate(float(sum(latent_bits.values())), latent_bits, channel_bits)
