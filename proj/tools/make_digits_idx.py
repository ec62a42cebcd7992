#!/usr/bin/env python3
"""Writes the scikit-learn handwritten digits as IDX files.

Each 8x8 image (values 0..16) is upsampled by pixel replication and scaled
to 0..255.
"""
import argparse
import struct
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits


def write_idx(path, array, magic):
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        for d in array.shape:
            f.write(struct.pack(">I", d))
        f.write(array.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data"))
    ap.add_argument("--scale", type=int, default=2, help="upsampling factor (2 gives 16x16)")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    digits = load_digits()
    images = digits.images.repeat(args.scale, axis=1).repeat(args.scale, axis=2)
    side = 8 * args.scale
    images = np.rint(images * (255.0 / 16.0)).clip(0, 255)
    write_idx(out / f"digits{side}-images.idx3-ubyte", images, 0x00000803)
    write_idx(out / f"digits{side}-labels.idx1-ubyte", digits.target, 0x00000801)
    print(f"wrote {len(images)} images to {out}")


if __name__ == "__main__":
    main()
