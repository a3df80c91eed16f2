"""Dual-branch (luminance / chrominance) hyperprior codec model.

The RGB input is converted to full-range YUV. The single Y plane feeds the
luminance branch and the U, V planes feed the chrominance branch. Each
branch owns an analysis transform, a synthesis transform, a hyper
analysis/synthesis pair predicting Gaussian scales for its latent, and a
factorized prior for its hyperlatent.
"""

from __future__ import annotations

import json
import zlib
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .color import rgb_to_yuv_t, yuv_to_rgb, yuv_to_rgb_t
from .entropy import PRIOR_FILTERS, SIGMA_FLOOR, FactorizedPrior, gaussian_likelihood
from .errors import DimensionError, NumericError, UsageError
from .metrics import ciede2000_map_t, ms_ssim_t
from .nn import cbam, conv2d, gdn, transposed_conv2d
from .tensor import Parameter, Tensor

BRANCHES = ("lum", "chroma")
BRANCH_PLANES = {"lum": 1, "chroma": 2}
GDN_BETA_FLOOR = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    lum_channels: int = 128
    chroma_channels: int = 64
    lum_hyper_channels: int = 128
    chroma_hyper_channels: int = 64
    analysis_kernel: int = 5
    analysis_strides: tuple[int, ...] = (2, 2, 2, 2)
    hyper_kernels: tuple[int, ...] = (3, 5, 5)
    hyper_strides: tuple[int, ...] = (1, 2, 2)
    cbam_reduction: int = 8
    cbam_kernel: int = 7
    sigma_floor: float = SIGMA_FLOOR
    name: str = "full"

    def __post_init__(self):
        if self.downsample_factor != 16:
            raise UsageError(f"analysis strides must multiply to 16, got {self.downsample_factor}")
        if not self.chroma_channels < self.lum_channels:
            raise UsageError("chroma branch must have fewer channels than the luminance branch")
        if len(self.hyper_kernels) != len(self.hyper_strides):
            raise UsageError("hyper kernels and strides differ in length")

    @property
    def downsample_factor(self) -> int:
        return int(np.prod(self.analysis_strides))

    @property
    def hyper_factor(self) -> int:
        return int(np.prod(self.hyper_strides))

    def channels(self, branch: str) -> int:
        return self.lum_channels if branch == "lum" else self.chroma_channels

    def hyper_channels(self, branch: str) -> int:
        return self.lum_hyper_channels if branch == "lum" else self.chroma_hyper_channels

    def to_dict(self) -> dict:
        d = asdict(self)
        d["analysis_strides"] = list(self.analysis_strides)
        d["hyper_kernels"] = list(self.hyper_kernels)
        d["hyper_strides"] = list(self.hyper_strides)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("analysis_strides", "hyper_kernels", "hyper_strides"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @property
    def config_id(self) -> int:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return zlib.crc32(blob) & 0xFFFF


PRESETS = {
    "full": ModelConfig(),
    "tiny": ModelConfig(
        lum_channels=32,
        chroma_channels=16,
        lum_hyper_channels=16,
        chroma_hyper_channels=16,
        name="tiny",
    ),
}


def preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise UsageError(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class LossWeights:
    lambda1: float
    lambda2: float
    lambda3: float

    def __post_init__(self):
        w = (self.lambda1, self.lambda2, self.lambda3)
        if any(v < 0 for v in w) or not any(v > 0 for v in w):
            raise UsageError(f"loss weights must be nonnegative with at least one positive: {w}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3)


# i-th entry of each published grid
LAMBDA_PRESETS = {
    "q1": LossWeights(0.001, 0.01, 0.024),
    "q2": LossWeights(0.005, 0.12, 0.12),
    "q3": LossWeights(0.01, 2.4, 0.24),
    "q4": LossWeights(0.02, 4.8, 0.48),
}


def lambda_id(weights: LossWeights) -> int:
    """1-4 for the named presets, 0 for anything else."""
    for i, key in enumerate(sorted(LAMBDA_PRESETS), start=1):
        if LAMBDA_PRESETS[key] == weights:
            return i
    return 0


# -- parameters -----------------------------------------------------------------

def _softplus_inv(y: float) -> float:
    return float(np.log(np.expm1(y)))


class ModelParams:
    """Ordered collection of named :class:`Parameter` objects plus their config."""

    def __init__(self, config: ModelConfig, tensors: "OrderedDict[str, Parameter]"):
        self.config = config
        self._params = tensors

    # mapping protocol
    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def names(self) -> list[str]:
        return list(self._params)

    def count(self) -> int:
        return int(sum(p.size for p in self._params.values()))

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            self.config,
            OrderedDict((k, Parameter(p.data.astype(dtype), k)) for k, p in self._params.items()),
        )

    def copy(self) -> "ModelParams":
        return self.astype(self.dtype)

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self._params.values())).dtype

    def prior(self, branch: str) -> FactorizedPrior:
        return FactorizedPrior(self, f"{branch}.prior")

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0, dtype=None) -> "ModelParams":
        rng = np.random.default_rng(seed)
        dtype = np.dtype(dtype or T.default_dtype())
        out: OrderedDict[str, Parameter] = OrderedDict()

        def add(name, arr):
            if name in out:
                raise UsageError(f"duplicate parameter name {name}")
            out[name] = Parameter(np.asarray(arr, dtype=dtype), name)

        def conv(name, o, i, k, fan_in):
            add(f"{name}.kernel", rng.normal(0.0, 1.0 / np.sqrt(fan_in), (o, i, k, k)))

        def gdn_params(name, c):
            add(f"{name}.beta", np.full(c, _softplus_inv(1.0)))
            gamma = np.full((c, c), -8.0)
            np.fill_diagonal(gamma, _softplus_inv(0.1))
            add(f"{name}.gamma", gamma)

        def cbam_params(name, c):
            hidden = max(c // config.cbam_reduction, 1)
            conv(f"{name}.mlp0", hidden, c, 1, c)
            # small positive bias keeps the narrow ReLU layer alive at init
            add(f"{name}.mlp0.bias", np.full(hidden, 0.1))
            conv(f"{name}.mlp1", c, hidden, 1, hidden)
            add(f"{name}.mlp1.bias", np.zeros(c))
            k = config.cbam_kernel
            conv(f"{name}.spatial", 1, 2, k, 2 * k * k)
            add(f"{name}.spatial.bias", np.zeros(1))

        k = config.analysis_kernel
        for b in BRANCHES:
            c = config.channels(b)
            ch = config.hyper_channels(b)
            planes = BRANCH_PLANES[b]
            # analysis
            cin = planes
            for i, s in enumerate(config.analysis_strides):
                conv(f"{b}.analysis.conv{i}", c, cin, k, cin * k * k)
                add(f"{b}.analysis.conv{i}.bias", np.zeros(c))
                gdn_params(f"{b}.analysis.gdn{i}", c)
                cin = c
            cbam_params(f"{b}.analysis.cbam", c)
            # synthesis (kernels stored as in x out, see transposed_conv2d)
            n_stages = len(config.analysis_strides)
            for i, s in enumerate(config.analysis_strides):
                cout = c if i < n_stages - 1 else planes
                conv(f"{b}.synthesis.tconv{i}", c, cout, k, c * k * k / (s * s))
                add(f"{b}.synthesis.tconv{i}.bias", np.zeros(cout))
                gdn_params(f"{b}.synthesis.igdn{i}", cout)
                if i == 0:
                    cbam_params(f"{b}.synthesis.cbam", c)
            # hyper analysis
            cin = c
            for i, (hk, hs) in enumerate(zip(config.hyper_kernels, config.hyper_strides)):
                conv(f"{b}.hyper_analysis.conv{i}", ch, cin, hk, cin * hk * hk)
                add(f"{b}.hyper_analysis.conv{i}.bias", np.zeros(ch))
                cin = ch
            # hyper synthesis mirrors hyper analysis
            rev = list(zip(config.hyper_kernels, config.hyper_strides))[::-1]
            for i, (hk, hs) in enumerate(rev):
                cout = ch if i < len(rev) - 1 else c
                conv(f"{b}.hyper_synthesis.tconv{i}", ch, cout, hk, ch * hk * hk / (hs * hs))
                add(f"{b}.hyper_synthesis.tconv{i}.bias", np.zeros(cout))
            # factorized prior: odd cascade (zero biases) so the untrained density is
            # symmetric; small matrix noise keeps channels distinct
            dims = (1,) + PRIOR_FILTERS + (1,)
            scale = 10.0 ** (1.0 / (len(dims) - 1))
            for j in range(len(dims) - 1):
                init = np.log(np.expm1(1.0 / scale / dims[j + 1]))
                add(f"{b}.prior.matrix{j}", init + 0.01 * rng.standard_normal((ch, dims[j + 1], dims[j])))
                add(f"{b}.prior.bias{j}", np.zeros((ch, dims[j + 1], 1)))
                if j < len(dims) - 2:
                    add(f"{b}.prior.factor{j}", np.zeros((ch, dims[j + 1], 1)))
        return cls(config, out)


def _gdn_values(params, prefix: str) -> tuple[Tensor, Tensor]:
    beta = T.softplus(params[f"{prefix}.beta"]) + GDN_BETA_FLOOR
    gamma = T.softplus(params[f"{prefix}.gamma"])
    return beta, gamma


def _cbam(x: Tensor, params, prefix: str) -> Tensor:
    return cbam(
        x,
        params[f"{prefix}.mlp0.kernel"],
        params[f"{prefix}.mlp0.bias"],
        params[f"{prefix}.mlp1.kernel"],
        params[f"{prefix}.mlp1.bias"],
        params[f"{prefix}.spatial.kernel"],
        params[f"{prefix}.spatial.bias"],
    )


def _check_branch(branch: str) -> None:
    if branch not in BRANCHES:
        raise UsageError(f"branch must be one of {BRANCHES}, got {branch!r}")


# -- transforms ------------------------------------------------------------------

def analysis(x, branch: str, params: ModelParams) -> Tensor:
    """Image planes ``(B, 1|2, H, W)`` to latent ``(B, C, H/16, W/16)``."""
    _check_branch(branch)
    x = T.as_tensor(x)
    cfg = params.config
    f = cfg.downsample_factor
    if x.ndim != 4 or x.shape[1] != BRANCH_PLANES[branch]:
        raise DimensionError(f"{branch} analysis expects (B, {BRANCH_PLANES[branch]}, H, W), got {x.shape}")
    if x.shape[2] % f or x.shape[3] % f:
        raise UsageError(f"input spatial size {x.shape[2:]} is not a multiple of {f}")
    for i, s in enumerate(cfg.analysis_strides):
        p = f"{branch}.analysis"
        x = conv2d(x, params[f"{p}.conv{i}.kernel"], params[f"{p}.conv{i}.bias"], s)
        x = gdn(x, *_gdn_values(params, f"{p}.gdn{i}"))
    return _cbam(x, params, f"{branch}.analysis.cbam")


def synthesis(y, branch: str, params: ModelParams) -> Tensor:
    """Latent ``(B, C, h, w)`` to image planes ``(B, 1|2, 16h, 16w)``."""
    _check_branch(branch)
    y = T.as_tensor(y)
    cfg = params.config
    if y.ndim != 4 or y.shape[1] != cfg.channels(branch):
        raise UsageError(f"{branch} synthesis expects {cfg.channels(branch)} latent channels, got {y.shape}")
    p = f"{branch}.synthesis"
    x = y
    for i, s in enumerate(cfg.analysis_strides):
        x = transposed_conv2d(x, params[f"{p}.tconv{i}.kernel"], params[f"{p}.tconv{i}.bias"], s)
        x = gdn(x, *_gdn_values(params, f"{p}.igdn{i}"), inverse=True)
        if i == 0:
            x = _cbam(x, params, f"{p}.cbam")
    return x


def hyper_analysis(y, branch: str, params: ModelParams) -> Tensor:
    """Latent magnitudes to hyperlatent ``(B, Ch, ceil(h/4), ceil(w/4))``."""
    _check_branch(branch)
    y = T.as_tensor(y)
    cfg = params.config
    if y.ndim != 4 or y.shape[1] != cfg.channels(branch):
        raise DimensionError(f"{branch} hyper analysis expects {cfg.channels(branch)} channels, got {y.shape}")
    p = f"{branch}.hyper_analysis"
    x = T.tabs(y)
    last = len(cfg.hyper_strides) - 1
    for i, s in enumerate(cfg.hyper_strides):
        x = conv2d(x, params[f"{p}.conv{i}.kernel"], params[f"{p}.conv{i}.bias"], s)
        if i < last:
            x = T.relu(x)
    return x


def hyper_synthesis(z_hat, branch: str, params: ModelParams, latent_size: tuple[int, int] | None = None) -> Tensor:
    """Hyperlatent to Gaussian scales for the latent, floored at ``sigma_floor``.

    The upsampled map is cropped to ``latent_size`` when the latent's spatial
    size is not a multiple of the hyper downsampling factor.
    """
    _check_branch(branch)
    z_hat = T.as_tensor(z_hat)
    cfg = params.config
    if z_hat.ndim != 4 or z_hat.shape[1] != cfg.hyper_channels(branch):
        raise DimensionError(f"{branch} hyper synthesis expects {cfg.hyper_channels(branch)} channels, got {z_hat.shape}")
    p = f"{branch}.hyper_synthesis"
    x = z_hat
    strides = cfg.hyper_strides[::-1]
    for i, s in enumerate(strides):
        x = transposed_conv2d(x, params[f"{p}.tconv{i}.kernel"], params[f"{p}.tconv{i}.bias"], s)
        if i < len(strides) - 1:
            x = T.relu(x)
    if latent_size is not None:
        h, w = latent_size
        if h > x.shape[2] or w > x.shape[3]:
            raise DimensionError(f"latent size {latent_size} exceeds hyper output {x.shape[2:]}")
        x = x[:, :, :h, :w]
    return T.clamp(T.exp(x), lo=cfg.sigma_floor)


def round_half_away(x: np.ndarray) -> np.ndarray:
    # adding 0.0 turns -0.0 into 0.0
    return np.sign(x) * np.floor(np.abs(x) + 0.5) + 0.0


def quantize(t, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """``noise``: add U[-0.5, 0.5) (identity gradient). ``round``: nearest integer, ties away from zero."""
    t = T.as_tensor(t)
    if mode == "noise":
        rng = rng if rng is not None else np.random.default_rng()
        noise = rng.uniform(-0.5, 0.5, size=t.shape).astype(t.dtype)
        return t + noise
    if mode == "round":
        return T.straight_through(t, round_half_away(t.data))
    raise UsageError(f"unknown quantization mode {mode!r}")


# -- image helpers ---------------------------------------------------------------

def pad_image(x: np.ndarray, multiple: int = 16) -> np.ndarray:
    """Reflect-pad the two trailing axes up to a multiple of ``multiple``."""
    h, w = x.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return x
    pads = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
    mode = "reflect" if min(h, w) > 1 else "symmetric"
    return np.pad(x, pads, mode=mode)


def padded_size(h: int, w: int, multiple: int = 16) -> tuple[int, int]:
    return h + (-h) % multiple, w + (-w) % multiple


def latent_shapes(config: ModelConfig, h: int, w: int) -> dict[str, tuple[int, ...]]:
    """Shapes (without batch) of every latent for an ``h x w`` image."""
    ph, pw = padded_size(h, w, config.downsample_factor)
    yh, yw = ph // config.downsample_factor, pw // config.downsample_factor
    zh, zw = yh, yw
    for s in config.hyper_strides:
        zh, zw = -(-zh // s), -(-zw // s)
    out = {}
    for b, tag in zip(BRANCHES, ("L", "C")):
        out[f"y_{tag}"] = (config.channels(b), yh, yw)
        out[f"z_{tag}"] = (config.hyper_channels(b), zh, zw)
    return out


# -- training objective ------------------------------------------------------------

@dataclass
class LossBreakdown:
    total: float
    rate_bpp: float
    mse: float
    msssim_term: float
    ciede: float
    ms_ssim: float
    weights: LossWeights
    tensor: Tensor | None = field(default=None, repr=False)

    def recomposed(self) -> float:
        w = self.weights
        return self.rate_bpp + w.lambda1 * self.mse + w.lambda2 * self.msssim_term + w.lambda3 * self.ciede


def _term(name: str, fn):
    try:
        value = fn()
    except NumericError as exc:
        raise NumericError(f"{name}: {exc}") from exc
    if not np.all(np.isfinite(value.data)):
        raise NumericError(f"{name} is not finite")
    return value


def _as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != 3:
        raise DimensionError(f"expected an RGB image (3, H, W) or batch (B, 3, H, W), got {x.shape}")
    return x


def forward_train(x, params: ModelParams, weights: LossWeights, seed: int | None = None) -> LossBreakdown:
    """Noise-relaxed forward pass returning the rate-distortion loss.

    ``rate_bpp`` is the total estimated bits of both branches' latents and
    hyperlatents divided by the number of (unpadded) pixels in the batch.
    Distortion terms compare the RGB reconstruction with ``x``.
    """
    if not isinstance(weights, LossWeights):
        weights = LossWeights(*weights)
    x = _as_batch(x).astype(params.dtype)
    n, _, h, w = x.shape
    rng = np.random.default_rng(seed)
    f = params.config.downsample_factor
    xp = pad_image(x, f)
    yuv = rgb_to_yuv_t(T.Tensor(xp))

    bits = None
    planes = []
    for branch, sl in (("lum", slice(0, 1)), ("chroma", slice(1, 3))):
        y = _term(f"{branch} analysis", lambda: analysis(yuv[:, sl], branch, params))
        z = hyper_analysis(y, branch, params)
        z_tilde = quantize(z, "noise", rng)
        sigma = _term(f"{branch} scales", lambda: hyper_synthesis(z_tilde, branch, params, y.shape[2:]))
        y_tilde = quantize(y, "noise", rng)
        lik_y = gaussian_likelihood(y_tilde, sigma)
        lik_z = params.prior(branch).likelihood(z_tilde)
        b = (T.log(lik_y).sum() + T.log(lik_z).sum()) * (-1.0 / np.log(2.0))
        bits = b if bits is None else bits + b
        planes.append(_term(f"{branch} synthesis", lambda: synthesis(y_tilde, branch, params)))

    x_hat = yuv_to_rgb_t(T.concat(planes, axis=1))[:, :, :h, :w]
    target = T.Tensor(x)
    rate = bits * (1.0 / (n * h * w))
    mse_t = _term("mse", lambda: T.mean(T.square(x_hat - target)))
    ms_t = _term("ms-ssim", lambda: T.mean(ms_ssim_t(x_hat, target)))
    ciede_t = _term("ciede2000", lambda: T.mean(ciede2000_map_t(x_hat, target)))
    total = rate + mse_t * weights.lambda1 + (1.0 - ms_t) * weights.lambda2 + ciede_t * weights.lambda3
    total = _term("total loss", lambda: total)
    return LossBreakdown(
        total=total.item(),
        rate_bpp=rate.item(),
        mse=mse_t.item(),
        msssim_term=1.0 - ms_t.item(),
        ciede=ciede_t.item(),
        ms_ssim=ms_t.item(),
        weights=weights,
        tensor=total,
    )


# -- inference -----------------------------------------------------------------------

@dataclass
class LatentBundle:
    """Rounded latents, rounded hyperlatents and predicted scales of one image.

    Arrays carry no batch axis: ``y_*`` and ``sigma_*`` are ``(C, h, w)``,
    ``z_*`` are ``(Ch, hz, wz)``. ``image_size`` is the unpadded ``(H, W)``.
    """

    y_L: np.ndarray
    y_C: np.ndarray
    z_L: np.ndarray
    z_C: np.ndarray
    sigma_L: np.ndarray
    sigma_C: np.ndarray
    image_size: tuple[int, int]

    def latent(self, name: str) -> np.ndarray:
        return getattr(self, name)


def scales_from_hyperlatent(z_hat: np.ndarray, branch: str, params: ModelParams, latent_size) -> np.ndarray:
    with T.no_grad():
        sigma = hyper_synthesis(T.Tensor(z_hat[None].astype(params.dtype)), branch, params, latent_size)
    return sigma.data[0]


def encode_latents(x: np.ndarray, params: ModelParams) -> LatentBundle:
    """Deterministic inference-time analysis of one ``(3, H, W)`` image."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] != 3:
        raise DimensionError(f"expected a (3, H, W) image, got {x.shape}")
    h, w = x.shape[1:]
    xp = pad_image(x, params.config.downsample_factor)[None].astype(params.dtype)
    out = {}
    with T.no_grad():
        yuv = rgb_to_yuv_t(T.Tensor(xp))
        for branch, tag, sl in (("lum", "L", slice(0, 1)), ("chroma", "C", slice(1, 3))):
            y = analysis(yuv[:, sl], branch, params)
            z = hyper_analysis(y, branch, params)
            z_hat = round_half_away(z.data[0])
            out[f"y_{tag}"] = round_half_away(y.data[0])
            out[f"z_{tag}"] = z_hat
            out[f"sigma_{tag}"] = scales_from_hyperlatent(z_hat, branch, params, y.shape[2:])
    return LatentBundle(image_size=(h, w), **out)


def synthesize_image(y_L: np.ndarray, y_C: np.ndarray, params: ModelParams) -> np.ndarray:
    """Unclamped, uncropped YUV planes ``(3, H, W)`` from rounded latents."""
    with T.no_grad():
        lum = synthesis(T.Tensor(y_L[None].astype(params.dtype)), "lum", params)
        chroma = synthesis(T.Tensor(y_C[None].astype(params.dtype)), "chroma", params)
    return np.concatenate([lum.data[0], chroma.data[0]], axis=0)


def decode_latents(bundle: LatentBundle, params: ModelParams, original_dims: tuple[int, int] | None = None) -> np.ndarray:
    """Reconstruct the RGB image, cropped to ``original_dims`` and clamped to [0, 1]."""
    h, w = original_dims if original_dims is not None else bundle.image_size
    f = params.config.downsample_factor
    expected = latent_shapes(params.config, h, w)
    for name in ("y_L", "y_C"):
        if bundle.latent(name).shape != expected[name]:
            raise DimensionError(f"{name} shape {bundle.latent(name).shape} does not match {expected[name]}")
    yuv = synthesize_image(bundle.y_L, bundle.y_C, params)
    rgb = yuv_to_rgb(yuv.astype(np.float64), clamp=True)
    assert rgb.shape[1] % f == 0
    return rgb[:, :h, :w]
