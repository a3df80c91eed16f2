"""Train a tiny model for a few steps, then compress and score one image.

    python3 demos/train_and_compress.py [--steps 60] [--out demo_out]

A few dozen steps will not give good images. The point is to show the
pieces working together: the loss going down, a real bitstream and its
rate/quality numbers.
"""

import argparse
from pathlib import Path

import numpy as np

from colorlic import checkpoint
from colorlic.bitstream import EntropyTables, compress_image, decompress_image
from colorlic.imageio import encode_png
from colorlic.metrics import metric_report
from colorlic.model import LAMBDA_PRESETS, ModelParams, preset
from colorlic.train import TrainConfig, synthetic_image, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=60)
    ap.add_argument("--out", default="demo_out")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(exist_ok=True)

    cfg = TrainConfig(steps=args.steps, patch_size=64, batch_size=4, synthetic_count=16, synthetic_size=128,
                      weights=LAMBDA_PRESETS["q2"], checkpoint=str(out / "demo.ckpt"))
    res = train(cfg, progress=lambda s, lb: s % 20 == 0 and print(
        f"step {s:4d}  loss {lb.total:8.4f}  rate {lb.rate_bpp:.3f} bpp  mse {lb.mse:.4f}"))
    total = res.log.column("total")
    k = min(10, len(total))
    print(f"mean loss first {k} steps {total[:k].mean():.4f}, last {k} steps {total[-k:].mean():.4f}")

    img = synthetic_image(12345, (96, 120))  # held-out seed
    for label, params in (("untrained", ModelParams.init(preset("tiny"), 0)), ("trained", res.checkpoint.params)):
        tables = EntropyTables(params)
        bits = compress_image(img, params, tables).to_bytes()
        rec = decompress_image(bits, params, tables)
        r = metric_report(img, rec)
        print(f"{label:9s}  {len(bits) * 8 / (96 * 120):.4f} bpp  PSNR {r.psnr:.2f} dB  "
              f"MS-SSIM {r.ms_ssim:.4f}  CIEDE2000 {r.ciede2000:.2f}")
        (out / f"{label}.png").write_bytes(encode_png(rec))
    (out / "original.png").write_bytes(encode_png(img))

    again = checkpoint.load(out / "demo.ckpt")
    same = all(np.array_equal(again.params[n].data, res.checkpoint.params[n].data) for n in again.params.names())
    print(f"checkpoint reload bit-exact: {same}; images written to {out}/")


if __name__ == "__main__":
    main()
