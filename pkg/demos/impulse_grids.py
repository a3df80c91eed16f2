"""Render channel impulse-response grids next to a DCT basis reference.

    python3 demos/impulse_grids.py [--checkpoint model.ckpt] [--out demo_out]

Without a checkpoint an untrained tiny model is used, so the tiles show
the structure of the synthesis network rather than learned bases.
"""

import argparse
from pathlib import Path

from colorlic import checkpoint
from colorlic.imageio import encode_png
from colorlic.impulse import dct_basis_grid, impulse_responses, order_by_bitrate, render_grid
from colorlic.model import ModelParams, preset
from colorlic.train import synthetic_image


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--checkpoint")
    ap.add_argument("--out", default="demo_out")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(exist_ok=True)
    params = checkpoint.load(args.checkpoint).params if args.checkpoint else ModelParams.init(preset("tiny"), 0)
    img = synthetic_image(2, 128)

    for branch in ("lum", "chroma"):
        s = order_by_bitrate(impulse_responses(img, params, branch))
        (out / f"{branch}_impulses.png").write_bytes(encode_png(render_grid(s, columns=8)))
        top = ", ".join(f"ch{e.channel}:{e.bits:.1f}" for e in s.entries[:5])
        print(f"{branch}: {len(s)} tiles, highest-rate channels {top}")
    (out / "dct_basis.png").write_bytes(encode_png(dct_basis_grid()))
    print(f"grids written to {out}/")


if __name__ == "__main__":
    main()
