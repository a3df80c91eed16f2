"""Four-segment compressed image container and the compress/decompress pipeline.

On-disk layout (little-endian)::

    magic "CLBS01" (6) | version u8 | orig_w u32 | orig_h u32 | padded_w u32 | padded_h u32
    | config_id u16 | lambda_id u16 | 4 x [seg_len u32 | seg_bytes]

Segments appear in the order z_L, z_C, y_L, y_C. Each is an independent
range-coded stream; symbols are visited channel by channel in raster order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .entropy import GaussianConditional, default_scale_table
from .errors import DimensionError, FormatError
from .model import BRANCHES, LatentBundle, ModelParams, encode_latents, latent_shapes, padded_size, scales_from_hyperlatent
from .rangecoder import range_decode, range_encode

MAGIC = b"CLBS01"
VERSION = 1
SEGMENT_ORDER = ("z_L", "z_C", "y_L", "y_C")
_HEADER = struct.Struct("<6sBIIIIHH")


@dataclass
class CompressedImage:
    orig_w: int
    orig_h: int
    padded_w: int
    padded_h: int
    config_id: int
    lambda_id: int
    segments: tuple[bytes, bytes, bytes, bytes]
    version: int = VERSION

    def to_bytes(self) -> bytes:
        if len(self.segments) != 4:
            raise FormatError("a compressed image has exactly four segments")
        out = [_HEADER.pack(MAGIC, self.version, self.orig_w, self.orig_h, self.padded_w, self.padded_h,
                            self.config_id, self.lambda_id)]
        for seg in self.segments:
            out.append(struct.pack("<I", len(seg)))
            out.append(bytes(seg))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompressedImage":
        if len(data) < _HEADER.size:
            raise FormatError("bitstream shorter than its header")
        magic, version, ow, oh, pw, ph, cid, lid = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise FormatError("bad bitstream magic")
        if version != VERSION:
            raise FormatError(f"unsupported bitstream version {version}")
        pos = _HEADER.size
        segments = []
        for _ in range(4):
            if pos + 4 > len(data):
                raise FormatError("bitstream truncated in segment table")
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if pos + n > len(data):
                raise FormatError("bitstream segment truncated")
            segments.append(bytes(data[pos : pos + n]))
            pos += n
        if pos != len(data):
            raise FormatError("trailing bytes after the last segment")
        return cls(ow, oh, pw, ph, cid, lid, tuple(segments), version)

    @property
    def total_bytes(self) -> int:
        return _HEADER.size + sum(4 + len(s) for s in self.segments)

    def bpp(self) -> float:
        return self.total_bytes * 8.0 / (self.orig_w * self.orig_h)


class EntropyTables:
    """Integer CDF tables shared by encoder and decoder for one parameter set."""

    def __init__(self, params: ModelParams, scale_table=None):
        self.gaussian = GaussianConditional(default_scale_table() if scale_table is None else scale_table)
        self.prior = {}
        for b in BRANCHES:
            offsets, tables = params.prior(b).build_tables()
            self.prior[b] = (offsets, tables)

    def z_symbols(self, branch: str, z: np.ndarray):
        offsets, _ = self.prior[branch]
        c = z.shape[0]
        sym = (z.reshape(c, -1) - offsets[:, None]).astype(np.int64)
        idx = np.repeat(np.arange(c), sym.shape[1])
        return sym.ravel(), idx

    def y_symbols(self, y: np.ndarray, sigma: np.ndarray):
        idx = self.gaussian.indexes(sigma).ravel()
        sym = y.ravel().astype(np.int64) + self.gaussian.offsets[idx]
        return sym, idx


def _encode(symbols, tables, indexes) -> bytes:
    return range_encode(symbols.tolist(), tables, indexes.tolist())


def _decode(data, tables, indexes) -> np.ndarray:
    return np.asarray(range_decode(data, tables, len(indexes), indexes.tolist()), dtype=np.int64)


def encode_bundle(bundle: LatentBundle, params: ModelParams, tables: EntropyTables, lambda_id: int = 0) -> CompressedImage:
    h, w = bundle.image_size
    ph, pw = padded_size(h, w, params.config.downsample_factor)
    segs = {}
    for b, tag in zip(BRANCHES, ("L", "C")):
        z = bundle.latent(f"z_{tag}")
        sym, idx = tables.z_symbols(b, z)
        segs[f"z_{tag}"] = _encode(sym, tables.prior[b][1], idx)
        # scales come from the decoded hyperlatent, exactly as on the decoder side
        y = bundle.latent(f"y_{tag}")
        sigma = scales_from_hyperlatent(z, b, params, y.shape[1:])
        sym, idx = tables.y_symbols(y, sigma)
        segs[f"y_{tag}"] = _encode(sym, tables.gaussian.tables, idx)
    return CompressedImage(w, h, pw, ph, params.config.config_id, lambda_id, tuple(segs[k] for k in SEGMENT_ORDER))


def decode_bundle(c: CompressedImage, params: ModelParams, tables: EntropyTables) -> LatentBundle:
    if c.config_id != params.config.config_id:
        raise FormatError(f"bitstream config id {c.config_id:#06x} does not match model {params.config.config_id:#06x}")
    if c.orig_w < 1 or c.orig_h < 1 or (c.padded_h, c.padded_w) != padded_size(c.orig_h, c.orig_w, params.config.downsample_factor):
        raise FormatError("inconsistent image dimensions in bitstream header")
    shapes = latent_shapes(params.config, c.orig_h, c.orig_w)
    seg = dict(zip(SEGMENT_ORDER, c.segments))
    out = {}
    for b, tag in zip(BRANCHES, ("L", "C")):
        zshape = shapes[f"z_{tag}"]
        offsets, ztables = tables.prior[b]
        idx = np.repeat(np.arange(zshape[0]), zshape[1] * zshape[2])
        zsym = _decode(seg[f"z_{tag}"], ztables, idx)
        z = (zsym.reshape(zshape[0], -1) + offsets[:, None]).reshape(zshape).astype(np.float64)
        yshape = shapes[f"y_{tag}"]
        sigma = scales_from_hyperlatent(z, b, params, yshape[1:])
        if sigma.shape != yshape:
            raise FormatError("decoded hyperlatent does not yield the expected scale map")
        yidx = tables.gaussian.indexes(sigma).ravel()
        ysym = _decode(seg[f"y_{tag}"], tables.gaussian.tables, yidx)
        y = (ysym - tables.gaussian.offsets[yidx]).reshape(yshape).astype(np.float64)
        out[f"z_{tag}"], out[f"y_{tag}"], out[f"sigma_{tag}"] = z, y, sigma
    return LatentBundle(image_size=(c.orig_h, c.orig_w), **out)


def compress_image(x: np.ndarray, params: ModelParams, tables: EntropyTables | None = None, lambda_id: int = 0) -> CompressedImage:
    """Analyse ``x`` (``(3, H, W)`` in [0, 1]) and entropy-code its four latents."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] != 3:
        raise DimensionError(f"expected a (3, H, W) image, got {x.shape}")
    tables = tables or EntropyTables(params)
    return encode_bundle(encode_latents(x, params), params, tables, lambda_id)


def decompress_image(c: CompressedImage | bytes, params: ModelParams, tables: EntropyTables | None = None) -> np.ndarray:
    """Reconstruct the RGB image, cropped to the header's original size."""
    from .model import decode_latents

    if isinstance(c, (bytes, bytearray)):
        c = CompressedImage.from_bytes(bytes(c))
    tables = tables or EntropyTables(params)
    return decode_latents(decode_bundle(c, params, tables), params)
