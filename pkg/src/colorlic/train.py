"""Training loop, synthetic data and rate-distortion evaluation."""

from __future__ import annotations

import csv
import dataclasses
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint as ckpt_io
from .bitstream import EntropyTables, compress_image, decompress_image
from .errors import NumericError, UsageError
from .imageio import load_image_dir
from .metrics import MetricReport, metric_report
from .model import LAMBDA_PRESETS, LossBreakdown, LossWeights, ModelParams, decode_latents, encode_latents, forward_train, lambda_id, preset
from .optim import AdamState, adam_step, clip_grad_norm

LOG_COLUMNS = ("step", "total", "rate_bpp", "mse", "msssim_term", "ciede")


# -- synthetic data -----------------------------------------------------------------

def _gradient(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    theta = rng.uniform(0, 2 * np.pi)
    t = np.cos(theta) * xx + np.sin(theta) * yy
    t = (t - t.min()) / max(np.ptp(t), 1e-9)
    a, b = rng.random(3), rng.random(3)
    return a[:, None, None] * (1 - t) + b[:, None, None] * t


def _checkerboard(rng, h, w):
    cell = int(rng.integers(4, 33))
    yy, xx = np.mgrid[0:h, 0:w]
    mask = ((yy // cell + xx // cell) % 2).astype(np.float64)
    a, b = rng.random(3), rng.random(3)
    return a[:, None, None] * (1 - mask) + b[:, None, None] * mask


def _blobs(rng, h, w):
    img = np.broadcast_to(rng.random(3)[:, None, None] * 0.5, (3, h, w)).copy()
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(int(rng.integers(3, 9))):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        s = rng.uniform(0.05, 0.3) * max(h, w)
        g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        img += (rng.random(3) - 0.3)[:, None, None] * g
    return np.clip(img, 0.0, 1.0)


SYNTHETIC_KINDS = (_gradient, _checkerboard, _blobs)


def synthetic_image(seed: int, size: int | tuple[int, int] = 256) -> np.ndarray:
    """One deterministic synthetic RGB image (gradient, checkerboard or color blobs)."""
    h, w = (size, size) if np.isscalar(size) else size
    rng = np.random.default_rng([seed, 0x5EED])
    kind = SYNTHETIC_KINDS[seed % len(SYNTHETIC_KINDS)]
    return kind(rng, h, w)


def synthetic_dataset(count: int, size: int | tuple[int, int] = 256, seed: int = 0) -> list[tuple[str, np.ndarray]]:
    return [(f"synthetic_{seed + i:05d}", synthetic_image(seed + i, size)) for i in range(count)]


def sample_patches(dataset: Sequence, n: int, size: int, seed) -> np.ndarray:
    """``n`` uniform random ``size x size`` crops, shape ``(n, 3, size, size)``.

    ``dataset`` holds ``(3, H, W)`` arrays or ``(name, array)`` pairs. Images
    smaller than ``size`` are skipped with a warning.
    """
    images = [item[1] if isinstance(item, tuple) else item for item in dataset]
    usable = [im for im in images if im.shape[1] >= size and im.shape[2] >= size]
    if len(usable) < len(images):
        warnings.warn(f"skipping {len(images) - len(usable)} image(s) smaller than {size}x{size}", stacklevel=2)
    if not usable:
        raise UsageError(f"no image in the dataset is at least {size}x{size}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = np.empty((n, 3, size, size), dtype=np.float64)
    for i in range(n):
        im = usable[int(rng.integers(len(usable)))]
        top = int(rng.integers(im.shape[1] - size + 1))
        left = int(rng.integers(im.shape[2] - size + 1))
        out[i] = im[:, top : top + size, left : left + size]
    return out


# -- configuration ------------------------------------------------------------------------

@dataclass
class TrainConfig:
    steps: int = 1000
    patch_size: int = 256
    batch_size: int = 8
    lr: float = 1e-4
    weights: LossWeights = field(default_factory=lambda: LAMBDA_PRESETS["q2"])
    seed: int = 0
    model: str = "tiny"
    data_dir: str | None = None
    val_dir: str | None = None
    synthetic_count: int = 64
    synthetic_size: int = 256
    val_count: int = 4
    checkpoint: str | None = None
    checkpoint_every: int = 0
    val_every: int = 0
    log_csv: str | None = None
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.patch_size % 16 or self.patch_size <= 0:
            raise UsageError(f"patch_size must be a positive multiple of 16, got {self.patch_size}")
        if self.batch_size < 1:
            raise UsageError("batch_size must be at least 1")
        if self.steps < 0:
            raise UsageError("steps must be nonnegative")
        if not isinstance(self.weights, LossWeights):
            self.weights = LossWeights(*self.weights)
        preset(self.model)


def parse_weights(text: str) -> LossWeights:
    """A preset name (``q1``..``q4``) or a comma separated triple."""
    text = text.strip()
    if text in LAMBDA_PRESETS:
        return LAMBDA_PRESETS[text]
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse loss weights {text!r}") from None
    if len(parts) != 3:
        raise UsageError(f"expected three loss weights, got {text!r}")
    return LossWeights(*parts)


def parse_config_text(text: str) -> TrainConfig:
    """Plain ``key = value`` lines; ``#`` starts a comment. ``weights`` accepts a preset or a triple."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
        if key == "weights":
            values[key] = parse_weights(value)
        elif types[key] in ("int", "int | None"):
            values[key] = int(value)
        elif types[key] == "float":
            values[key] = float(value)
        else:
            values[key] = value or None
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    return parse_config_text(path.read_text())


# -- training -------------------------------------------------------------------------------

@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)
    wall_clock: list[float] = field(default_factory=list)
    validation: list[tuple[int, dict]] = field(default_factory=list)

    def append(self, step: int, lb: LossBreakdown, elapsed: float) -> None:
        if self.records and step <= self.records[-1]["step"]:
            raise UsageError("log records must increase in step")
        self.records.append({"step": step, "total": lb.total, "rate_bpp": lb.rate_bpp, "mse": lb.mse,
                             "msssim_term": lb.msssim_term, "ciede": lb.ciede})
        self.wall_clock.append(elapsed)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records])

    def to_csv(self, path) -> None:
        path = Path(path)
        lines = [",".join(LOG_COLUMNS)]
        lines += [",".join(repr(r[c]) if c != "step" else str(r[c]) for c in LOG_COLUMNS) for r in self.records]
        ckpt_io.atomic_write(path, ("\n".join(lines) + "\n").encode())


@dataclass
class TrainResult:
    checkpoint: ckpt_io.Checkpoint
    log: TrainLog


def _dataset(config: TrainConfig):
    if config.data_dir:
        return load_image_dir(config.data_dir)
    return synthetic_dataset(config.synthetic_count, config.synthetic_size, seed=config.seed * 100_003)


def validation_set(config: TrainConfig):
    if config.val_dir:
        return load_image_dir(config.val_dir)
    # disjoint seed range from the training images
    return synthetic_dataset(config.val_count, config.patch_size, seed=10_000_000 + config.seed)


def validate(images, params: ModelParams) -> dict:
    reports = [metric_report(im, decode_latents(encode_latents(im, params), params)) for _, im in images]
    return {k: float(np.mean([getattr(r, k) for r in reports])) for k in MetricReport.__dataclass_fields__}


def _make_checkpoint(params, adam, config, step) -> ckpt_io.Checkpoint:
    meta = {"step": step, "seed": config.seed, "weights": list(config.weights.as_tuple()),
            "lambda_id": lambda_id(config.weights)}
    return ckpt_io.Checkpoint(params, adam, meta)


def train_step(params: ModelParams, adam: AdamState, batch: np.ndarray, weights: LossWeights, noise_seed, clip_norm: float) -> LossBreakdown:
    params.zero_grad()
    lb = forward_train(batch, params, weights, seed=noise_seed)
    lb.tensor.backward()
    for p in params.values():
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient for {p.name}")
    if clip_norm:
        clip_grad_norm(params, clip_norm)
    adam_step(params, adam)
    return lb


def train(config: TrainConfig, init: ckpt_io.Checkpoint | None = None,
          progress: Callable[[int, LossBreakdown], None] | None = None) -> TrainResult:
    """Optimize the rate-distortion loss for ``config.steps`` total steps.

    Patches and quantization noise for step ``k`` derive from ``(seed, k)``,
    so resuming from a checkpoint saved after step ``k`` reproduces the
    uninterrupted run.
    """
    if init is not None:
        params = init.params.astype(np.float32)
        adam = init.adam or AdamState(lr=config.lr)
        start = int(init.meta.get("step", adam.step))
    else:
        params = ModelParams.init(preset(config.model), config.seed, np.float32)
        adam = AdamState(lr=config.lr)
        start = 0
    adam.lr = config.lr
    data = _dataset(config)
    val = validation_set(config) if config.val_every else None
    log = TrainLog()
    t0 = time.perf_counter()
    for step in range(start + 1, config.steps + 1):
        rng = np.random.default_rng([config.seed, step])
        batch = sample_patches(data, config.batch_size, config.patch_size, rng)
        try:
            lb = train_step(params, adam, batch, config.weights, rng, config.clip_norm)
        except NumericError:
            if config.checkpoint:
                ckpt_io.save(config.checkpoint, _make_checkpoint(params, adam, config, step - 1))
            raise
        log.append(step, lb, time.perf_counter() - t0)
        if progress:
            progress(step, lb)
        if config.val_every and step % config.val_every == 0:
            log.validation.append((step, validate(val, params)))
        if config.checkpoint and config.checkpoint_every and step % config.checkpoint_every == 0:
            ckpt_io.save(config.checkpoint, _make_checkpoint(params, adam, config, step))
    final = _make_checkpoint(params, adam, config, max(config.steps, start))
    if config.checkpoint:
        ckpt_io.save(config.checkpoint, final)
    if config.log_csv:
        log.to_csv(config.log_csv)
    return TrainResult(final, log)


# -- evaluation ---------------------------------------------------------------------------

RD_COLUMNS = ("checkpoint", "image", "bpp", "psnr_db", "msssim", "msssim_db", "ciede2000")


@dataclass(frozen=True)
class RdRecord:
    image: str
    bpp: float
    psnr_db: float
    msssim: float
    msssim_db: float
    ciede2000: float
    checkpoint: str = ""

    def row(self) -> list[str]:
        return [self.checkpoint, self.image] + [repr(float(getattr(self, c))) for c in RD_COLUMNS[2:]]

    def summary(self) -> str:
        return (f"{self.image}: {self.bpp:.4f} bpp, PSNR {self.psnr_db:.2f} dB, "
                f"MS-SSIM {self.msssim:.4f} ({self.msssim_db:.2f} dB), CIEDE2000 {self.ciede2000:.2f}")


def evaluate(images, params: ModelParams, label: str = "", tables: EntropyTables | None = None) -> list[RdRecord]:
    """Compress and decompress every ``(name, image)`` pair; bpp comes from the real bitstream size."""
    tables = tables or EntropyTables(params)
    records = []
    for name, img in images:
        c = compress_image(img, params, tables)
        rec = decompress_image(c.to_bytes(), params, tables)
        rep = metric_report(img, rec)
        records.append(RdRecord(name, c.bpp(), rep.psnr, rep.ms_ssim, rep.ms_ssim_db, rep.ciede2000, label))
    return records


def mean_record(records: Sequence[RdRecord], name: str = "mean") -> RdRecord:
    if not records:
        raise UsageError("no records to average")
    vals = {c: float(np.mean([getattr(r, c) for r in records])) for c in RD_COLUMNS[2:]}
    return RdRecord(name, checkpoint=records[0].checkpoint, **vals)


def write_rd_csv(path, records: Sequence[RdRecord]) -> None:
    lines = [",".join(RD_COLUMNS)] + [",".join(r.row()) for r in records]
    ckpt_io.atomic_write(Path(path), ("\n".join(lines) + "\n").encode())


def read_rd_csv(path) -> list[RdRecord]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [RdRecord(r["image"], *(float(r[c]) for c in RD_COLUMNS[2:]), checkpoint=r["checkpoint"]) for r in rows]
