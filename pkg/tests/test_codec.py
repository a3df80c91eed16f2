import os
import struct

import numpy as np
import pytest

from colorlic import checkpoint as ck
from colorlic.bitstream import (
    MAGIC,
    SEGMENT_ORDER,
    CompressedImage,
    EntropyTables,
    compress_image,
    decode_bundle,
    decompress_image,
    encode_bundle,
)
from colorlic.entropy import estimate_rate_bits
from colorlic.errors import FormatError, UsageError
from colorlic.model import ModelConfig, ModelParams, decode_latents, encode_latents, preset
from colorlic.optim import AdamState


@pytest.fixture(scope="module")
def tables(lively_params):
    return EntropyTables(lively_params)


def test_header_layout_is_byte_exact():
    c = CompressedImage(100, 75, 112, 80, 0xBEEF, 3, (b"a", b"", b"xyz", b"\x00\x01"))
    data = c.to_bytes()
    assert data[:6] == MAGIC and data[6] == 1
    assert struct.unpack_from("<IIIIHH", data, 7) == (100, 75, 112, 80, 0xBEEF, 3)
    assert data[27:31] == struct.pack("<I", 1) and data[31:32] == b"a"
    assert len(data) == 27 + 4 * 4 + 1 + 0 + 3 + 2 == c.total_bytes
    assert CompressedImage.from_bytes(data) == c


def test_bitstream_rejects_damage():
    data = CompressedImage(4, 4, 16, 16, 1, 0, (b"a", b"b", b"c", b"d")).to_bytes()
    for bad in (b"XXBS01" + data[6:], data[:-1], data + b"\x00", data[:10], data[:6] + b"\x07" + data[7:]):
        with pytest.raises(FormatError):
            CompressedImage.from_bytes(bad)


def test_segments_decode_in_declared_order(lively_params, tables):
    img = np.random.default_rng(0).random((3, 64, 64))
    bundle = encode_latents(img, lively_params)
    c = encode_bundle(bundle, lively_params, tables)
    assert SEGMENT_ORDER == ("z_L", "z_C", "y_L", "y_C")
    # swapping y segments must break decoding or change the latents
    swapped = CompressedImage(**{**c.__dict__, "segments": (c.segments[0], c.segments[1], c.segments[3], c.segments[2])})
    try:
        d = decode_bundle(swapped, lively_params, tables)
        assert not np.array_equal(d.y_L, bundle.y_L)
    except FormatError:
        pass
    d = decode_bundle(c, lively_params, tables)
    for k in ("y_L", "y_C", "z_L", "z_C"):
        np.testing.assert_array_equal(d.latent(k), bundle.latent(k))


def test_config_id_mismatch_is_rejected(lively_params, tables):
    c = compress_image(np.random.default_rng(1).random((3, 16, 16)), lively_params, tables)
    c.config_id ^= 1
    with pytest.raises(FormatError):
        decompress_image(c, lively_params, tables)


def test_inconsistent_padded_dims_rejected(lively_params, tables):
    c = compress_image(np.random.default_rng(1).random((3, 16, 16)), lively_params, tables)
    c.padded_w = 48
    with pytest.raises(FormatError):
        decompress_image(c, lively_params, tables)


def test_non_multiple_size_round_trip_crops(lively_params, tables):
    img = np.random.default_rng(2).random((3, 75, 100))
    c = compress_image(img, lively_params, tables)
    assert (c.orig_w, c.orig_h, c.padded_w, c.padded_h) == (100, 75, 112, 80)
    rec = decompress_image(c.to_bytes(), lively_params, tables)
    assert rec.shape == (3, 75, 100)


def test_decompress_equals_direct_decode(lively_params, tables):
    img = np.random.default_rng(3).random((3, 48, 64))
    bundle = encode_latents(img, lively_params)
    direct = decode_latents(bundle, lively_params)
    via_bits = decompress_image(compress_image(img, lively_params, tables).to_bytes(), lively_params, tables)
    np.testing.assert_array_equal(via_bits, direct)


def test_actual_bits_track_estimate(lively_params, tables):
    img = np.random.default_rng(4).random((3, 64, 64))
    bundle = encode_latents(img, lively_params)
    est = estimate_rate_bits(bundle, lively_params).total_bits
    c = encode_bundle(bundle, lively_params, tables)
    payload = 8 * sum(len(s) for s in c.segments)
    assert est - 1 <= payload <= est + 512


def test_compression_is_deterministic(lively_params, tables):
    img = np.random.default_rng(5).random((3, 32, 32))
    a = compress_image(img, lively_params, tables, lambda_id=2).to_bytes()
    assert a == compress_image(img, lively_params, EntropyTables(lively_params), lambda_id=2).to_bytes()


# -- checkpoints ----------------------------------------------------------------------------

def _adam(params, seed=0):
    rng = np.random.default_rng(seed)
    return AdamState(lr=3e-4, step=17,
                     m={k: rng.standard_normal(p.shape).astype(np.float32) for k, p in params.items()},
                     v={k: rng.random(p.shape).astype(np.float32) for k, p in params.items()})


def test_checkpoint_round_trip_is_bit_exact(tmp_path, tiny_params):
    path = tmp_path / "m.ckpt"
    adam = _adam(tiny_params)
    ck.save(path, ck.Checkpoint(tiny_params, adam, {"step": 17, "lambda_id": 2}))
    got = ck.load(path)
    assert got.params.config == tiny_params.config and got.meta == {"step": 17, "lambda_id": 2}
    for k, p in tiny_params.items():
        assert got.params[k].data.tobytes() == p.data.tobytes()
        assert got.adam.m[k].tobytes() == adam.m[k].tobytes()
        assert got.adam.v[k].tobytes() == adam.v[k].tobytes()
    assert (got.adam.lr, got.adam.step) == (3e-4, 17)
    assert ck.to_bytes(got) == path.read_bytes()


def test_checkpoint_without_adam(tmp_path):
    small = ModelParams.init(ModelConfig(lum_channels=8, chroma_channels=4, lum_hyper_channels=4,
                                         chroma_hyper_channels=4, name="s"), seed=1)
    data = ck.to_bytes(ck.Checkpoint(small))
    assert data[:8] == b"CLCKPT01"
    assert data[-1] == 0
    got = ck.from_bytes(data)
    assert got.adam is None and got.params.names() == small.names()


def test_checkpoint_rejects_damage(tmp_path, tiny_params):
    data = ck.to_bytes(ck.Checkpoint(tiny_params))
    for bad in (b"NOTACKPT" + data[8:], data[:-5], data + b"!"):
        with pytest.raises(FormatError):
            ck.from_bytes(bad)
    with pytest.raises(UsageError):
        ck.load(tmp_path / "missing.ckpt")


def test_atomic_write_leaves_old_file_on_failure(tmp_path, monkeypatch):
    path = tmp_path / "x.bin"
    ck.atomic_write(path, b"old")

    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        ck.atomic_write(path, b"new")
    assert path.read_bytes() == b"old"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["x.bin"]


def test_scale_table_travels_with_checkpoint(tiny_params):
    table = np.geomspace(0.2, 30, 40)
    got = ck.from_bytes(ck.to_bytes(ck.Checkpoint(tiny_params, scale_table=table)))
    np.testing.assert_array_equal(got.scale_table, table)
    assert len(EntropyTables(got.params, got.scale_table).gaussian.tables) == 40


def test_full_preset_checkpoint_shapes():
    cfg = preset("full")
    p = ModelParams.init(cfg, seed=0)
    got = ck.from_bytes(ck.to_bytes(ck.Checkpoint(p)))
    assert got.params["lum.analysis.conv0.kernel"].shape == p["lum.analysis.conv0.kernel"].shape
    assert got.params.config.config_id == cfg.config_id
