#!/usr/bin/env python3
"""Build IDX image/label files from the digits bundled in the npm `mnist` package.

The package ships 1000 MNIST digits per class as JSON arrays of 784 floats,
stored with three decimals. Each value is mapped back to its byte with
round(v * 255). Output order is class-major (all zeros, then all ones, ...);
training code shuffles with a seeded split.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_idx.py package/src/digits data
"""
import json
import pathlib
import struct
import sys


def main(src: str, out: str) -> None:
    src_dir = pathlib.Path(src)
    out_dir = pathlib.Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pixels = bytearray()
    labels = bytearray()
    for digit in range(10):
        flat = json.loads((src_dir / f"{digit}.json").read_text())["data"]
        if len(flat) % 784:
            raise SystemExit(f"{digit}.json: length {len(flat)} not a multiple of 784")
        for v in flat:
            b = round(v * 255)
            if not 0 <= b <= 255:
                raise SystemExit(f"{digit}.json: pixel {v} out of range")
            pixels.append(b)
        labels.extend([digit] * (len(flat) // 784))
    n = len(labels)
    (out_dir / "mnist10k-images-idx3-ubyte").write_bytes(
        struct.pack(">IIII", 0x00000803, n, 28, 28) + bytes(pixels))
    (out_dir / "mnist10k-labels-idx1-ubyte").write_bytes(
        struct.pack(">II", 0x00000801, n) + bytes(labels))
    print(f"wrote {n} images to {out_dir}")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        raise SystemExit(__doc__)
    main(sys.argv[1], sys.argv[2])
