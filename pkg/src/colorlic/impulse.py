"""Channel impulse responses of the synthesis transforms.

For every latent channel, keep only that channel's largest-magnitude
(signed) value from a real image's quantized latent, place it in an
otherwise zero ``1 x 1 x C`` latent and synthesize a 16 x 16 tile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import idctn

from . import tensor as T
from .color import yuv_to_rgb
from .entropy import estimate_rate_bits
from .errors import UsageError
from .model import BRANCHES, ModelParams, encode_latents, synthesis

# planes paired with a single-branch response before conversion to RGB
NEUTRAL_CHROMA = 0.0
MID_LUMA = 0.5
CSV_COLUMNS = ("rank", "channel", "bits", "value", "row", "col")


@dataclass
class ImpulseEntry:
    channel: int
    value: float
    position: tuple[int, int]
    tile: np.ndarray  # (3, 16, 16) RGB, not clamped
    bits: float


@dataclass
class ImpulseSet:
    branch: str
    entries: list[ImpulseEntry]
    bias_tile: np.ndarray = field(repr=False, default=None)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def bits(self) -> np.ndarray:
        return np.array([e.bits for e in self.entries])

    @property
    def channels(self) -> list[int]:
        return [e.channel for e in self.entries]


def _to_rgb(planes: np.ndarray, branch: str) -> np.ndarray:
    """Complete a 1- or 2-plane response with constant planes and convert to RGB."""
    n, _, h, w = planes.shape
    yuv = np.empty((n, 3, h, w), dtype=np.float64)
    if branch == "lum":
        yuv[:, 0] = planes[:, 0]
        yuv[:, 1:] = NEUTRAL_CHROMA
    else:
        yuv[:, 0] = MID_LUMA
        yuv[:, 1:] = planes
    return yuv_to_rgb(yuv, clamp=False)


def synthesize_impulses(latents: np.ndarray, branch: str, params: ModelParams) -> np.ndarray:
    """RGB tiles for a batch of ``(N, C, 1, 1)`` latents."""
    with T.no_grad():
        out = synthesis(T.Tensor(latents.astype(params.dtype)), branch, params)
    return _to_rgb(out.data.astype(np.float64), branch)


def impulse_responses(image: np.ndarray, params: ModelParams, branch: str) -> ImpulseSet:
    """Impulse tiles for every channel of ``branch``, in channel order.

    ``image`` is an RGB ``(3, H, W)`` array; it is converted to YUV and
    analysed to obtain realistic latent values. Channel bits are measured on
    the full quantized latent under the model's entropy model.
    """
    if branch not in BRANCHES:
        raise UsageError(f"branch must be one of {BRANCHES}, got {branch!r}")
    bundle = encode_latents(image, params)
    tag = "L" if branch == "lum" else "C"
    y = bundle.latent(f"y_{tag}")
    bits = estimate_rate_bits(bundle, params).channel_bits[f"y_{tag}"]
    c = y.shape[0]
    flat = np.abs(y.reshape(c, -1))
    argmax = flat.argmax(axis=1)  # first occurrence on ties
    values = y.reshape(c, -1)[np.arange(c), argmax]
    latents = np.zeros((c + 1, c, 1, 1))
    latents[np.arange(c), np.arange(c), 0, 0] = values
    tiles = synthesize_impulses(latents, branch, params)
    entries = [
        ImpulseEntry(i, float(values[i]), tuple(int(v) for v in np.unravel_index(argmax[i], y.shape[1:])), tiles[i], float(bits[i]))
        for i in range(c)
    ]
    return ImpulseSet(branch, entries, bias_tile=tiles[c])


def bias_image(params: ModelParams, branch: str) -> np.ndarray:
    """Synthesis output of an all-zero ``1 x 1`` latent for ``branch``."""
    c = params.config.channels(branch)
    return synthesize_impulses(np.zeros((1, c, 1, 1)), branch, params)[0]


def order_by_bitrate(s: ImpulseSet) -> ImpulseSet:
    """Descending bits; equal bits keep ascending channel order."""
    order = sorted(range(len(s.entries)), key=lambda i: (-s.entries[i].bits, s.entries[i].channel))
    return ImpulseSet(s.branch, [s.entries[i] for i in order], s.bias_tile)


def normalize_tile(tile: np.ndarray) -> np.ndarray:
    lo, hi = float(tile.min()), float(tile.max())
    if hi - lo <= 0:
        return np.full_like(tile, 0.5)
    return (tile - lo) / (hi - lo)


def mosaic(tiles: list[np.ndarray], columns: int, separator: float = 1.0) -> np.ndarray:
    """Row-major tiling of equal-size ``(3, h, w)`` tiles with 1-pixel separators."""
    if not tiles:
        raise UsageError("nothing to render")
    if columns < 1:
        raise UsageError("columns must be at least 1")
    n = len(tiles)
    _, th, tw = tiles[0].shape
    cols = min(columns, n)
    rows = math.ceil(n / cols)
    out = np.full((3, rows * th + rows - 1, cols * tw + cols - 1), separator, dtype=np.float64)
    for k, tile in enumerate(tiles):
        r, c = divmod(k, cols)
        out[:, r * (th + 1) : r * (th + 1) + th, c * (tw + 1) : c * (tw + 1) + tw] = tile
    return out


def render_grid(s: ImpulseSet, columns: int = 16) -> np.ndarray:
    """Per-tile min-max normalized mosaic of the set, in its current order."""
    return mosaic([normalize_tile(e.tile) for e in s.entries], columns)


def csv_rows(s: ImpulseSet) -> list[list[str]]:
    return [[str(k), str(e.channel), repr(e.bits), repr(e.value), str(e.position[0]), str(e.position[1])]
            for k, e in enumerate(s.entries)]


def dct_basis_grid(size: int = 16, count: int = 8) -> np.ndarray:
    """The ``count x count`` lowest-frequency 2-D DCT-II basis images of side ``size``, as a gray mosaic."""
    tiles = []
    for u in range(count):
        for v in range(count):
            coef = np.zeros((size, size))
            coef[u, v] = 1.0
            basis = idctn(coef, norm="ortho")
            tiles.append(np.repeat(normalize_tile(basis)[None], 3, axis=0))
    return mosaic(tiles, count)
