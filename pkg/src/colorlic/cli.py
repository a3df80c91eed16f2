"""Command-line entry point: ``colorlic <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 malformed file, 4 numeric failure.
Set ``COLORLIC_THREADS`` to change the BLAS thread count (default 1, which
is the deterministic mode).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .bitstream import CompressedImage, EntropyTables, compress_image, decompress_image
from .errors import CodecError, FormatError, NumericError
from .imageio import encode_png, load_image_dir, read_image
from .impulse import CSV_COLUMNS, csv_rows, impulse_responses, order_by_bitrate, render_grid
from .model import BRANCHES
from .train import (
    RdRecord,
    TrainConfig,
    evaluate,
    load_config,
    mean_record,
    parse_weights,
    train,
    write_rd_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4
THREADS_ENV = "COLORLIC_THREADS"


def _images(paths: list[str]) -> list[tuple[str, np.ndarray]]:
    out = []
    for p in paths:
        out.extend(load_image_dir(p) if Path(p).is_dir() else [(Path(p).name, read_image(p))])
    if not out:
        raise CodecError("no images found")
    return out


def _lambda_id(ckpt) -> int:
    return int(ckpt.meta.get("lambda_id", 0))


def cmd_train(args) -> int:
    config = load_config(args.config) if args.config else TrainConfig()
    overrides = {
        "steps": args.steps, "patch_size": args.patch_size, "batch_size": args.batch_size, "lr": args.lr,
        "seed": args.seed, "model": args.model, "data_dir": args.data, "log_csv": args.log,
        "checkpoint_every": args.checkpoint_every,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    if args.weights:
        config.weights = parse_weights(args.weights)
    config.checkpoint = args.output
    config.__post_init__()
    init = ckpt_io.load(args.resume) if args.resume else None

    def progress(step, lb):
        if not args.quiet and (step % args.print_every == 0 or step == config.steps):
            print(f"step={step} total={lb.total:.6g} rate_bpp={lb.rate_bpp:.6g} mse={lb.mse:.6g} "
                  f"msssim_term={lb.msssim_term:.6g} ciede={lb.ciede:.6g}", flush=True)

    train(config, init, progress)
    print(f"checkpoint={args.output}")
    return EXIT_OK


def cmd_compress(args) -> int:
    ckpt = ckpt_io.load(args.checkpoint)
    img = read_image(args.input)
    c = compress_image(img, ckpt.params, EntropyTables(ckpt.params, ckpt.scale_table), _lambda_id(ckpt))
    data = c.to_bytes()
    ckpt_io.atomic_write(args.output, data)
    print(f"bpp={len(data) * 8 / (c.orig_w * c.orig_h):.6f}")
    return EXIT_OK


def cmd_decompress(args) -> int:
    ckpt = ckpt_io.load(args.checkpoint)
    path = Path(args.input)
    if not path.is_file():
        raise CodecError(f"bitstream not found: {path}")
    img = decompress_image(CompressedImage.from_bytes(path.read_bytes()), ckpt.params,
                           EntropyTables(ckpt.params, ckpt.scale_table))
    ckpt_io.atomic_write(args.output, encode_png(img))
    return EXIT_OK


def _eval_records(images, ckpt_path: str) -> list[RdRecord]:
    ckpt = ckpt_io.load(ckpt_path)
    tables = EntropyTables(ckpt.params, ckpt.scale_table)
    records = evaluate(images, ckpt.params, label=Path(ckpt_path).name, tables=tables)
    return records + [mean_record(records)]


def cmd_eval(args) -> int:
    records = _eval_records(_images(args.images), args.checkpoint)
    for r in records:
        print(r.summary())
    if args.csv:
        write_rd_csv(args.csv, records)
    return EXIT_OK


def cmd_rdcurve(args) -> int:
    images = _images(args.images)
    records = []
    for path in args.checkpoints:
        records.extend(_eval_records(images, path))
    write_rd_csv(args.output, records)
    for r in records:
        if r.image == "mean":
            print(f"{r.checkpoint}: {r.summary()}")
    return EXIT_OK


def cmd_impulse(args) -> int:
    ckpt = ckpt_io.load(args.checkpoint)
    img = read_image(args.input)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [",".join(("branch",) + CSV_COLUMNS)]
    grids = {}
    for branch in BRANCHES:
        s = order_by_bitrate(impulse_responses(img, ckpt.params, branch))
        grids[branch] = render_grid(s, args.columns)
        lines += [",".join([branch] + row) for row in csv_rows(s)]
    for branch, grid in grids.items():
        ckpt_io.atomic_write(out_dir / f"{branch}_impulses.png", encode_png(grid))
    ckpt_io.atomic_write(out_dir / "impulses.csv", ("\n".join(lines) + "\n").encode())
    print(f"wrote {', '.join(f'{b}_impulses.png' for b in BRANCHES)} and impulses.csv to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="colorlic", description="Dual-branch learned image codec.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--output", "-o", required=True, help="checkpoint to write")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--weights", help="preset q1..q4 or 'l1,l2,l3'")
    p.add_argument("--model", choices=["tiny", "full"])
    p.add_argument("--steps", type=int)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="directory of training images (default: synthetic)")
    p.add_argument("--log", help="CSV training log")
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--print-every", type=int, default=50)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", help="encode an image to a bitstream")
    p.add_argument("input")
    p.add_argument("--checkpoint", "-c", required=True)
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="decode a bitstream to PNG")
    p.add_argument("input")
    p.add_argument("--checkpoint", "-c", required=True)
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("eval", help="rate and quality of one checkpoint")
    p.add_argument("images", nargs="+", help="image files or directories")
    p.add_argument("--checkpoint", "-c", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("impulse", help="channel impulse-response grids")
    p.add_argument("input")
    p.add_argument("--checkpoint", "-c", required=True)
    p.add_argument("--out-dir", "-o", required=True)
    p.add_argument("--columns", type=int, default=16)
    p.set_defaults(func=cmd_impulse)

    p = sub.add_parser("rdcurve", help="rate-distortion CSV over several checkpoints")
    p.add_argument("images", nargs="+", help="image files or directories")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_rdcurve)
    return ap


def _threads() -> int:
    value = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(value)
    except ValueError:
        raise CodecError(f"{THREADS_ENV} must be an integer, got {value!r}") from None
    if n < 1:
        raise CodecError(f"{THREADS_ENV} must be at least 1")
    return n


def main(argv=None) -> int:
    from threadpoolctl import threadpool_limits

    args = build_parser().parse_args(argv)
    try:
        with threadpool_limits(limits=_threads()):
            return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CodecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
