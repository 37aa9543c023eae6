"""Reference external codec honoring the subprocess contract.

Stands in for a real video encoder in tests and experiments:

    python3 -m streamstgs.codec.extstub encode --width W --height H --frames E --qp Q
    python3 -m streamstgs.codec.extstub decode --width W --height H --frames E --qp Q

encode reads raw 8-bit grayscale frames from stdin and writes a bitstream
to stdout; decode is the inverse. Coding is QP-stepped intra + delta with a
DEFLATE back-end, all on the 8-bit scale.
"""
import argparse
import struct
import sys
import zlib

import numpy as np


def _step(qp: int) -> int:
    return max(1, int(round(2.0 ** ((qp - 4) / 6.0))))


def encode(width: int, height: int, frames: int, qp: int) -> None:
    raw = sys.stdin.buffer.read()
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(frames, height, width).astype(np.int64)
    step = _step(qp)
    out = []
    recon = None
    for k in range(frames):
        target = arr[k] if recon is None else arr[k] - recon
        codes = np.rint(target / step).astype(np.int64)
        recon = codes * step if recon is None else recon + codes * step
        comp = zlib.compress(codes.astype("<i2").tobytes(), 6)
        out.append(struct.pack("<I", len(comp)) + comp)
    sys.stdout.buffer.write(b"".join(out))


def decode(width: int, height: int, frames: int, qp: int) -> None:
    data = sys.stdin.buffer.read()
    step = _step(qp)
    off = 0
    recon = None
    out = []
    for _ in range(frames):
        (length,) = struct.unpack_from("<I", data, off)
        off += 4
        codes = np.frombuffer(zlib.decompress(data[off : off + length]), dtype="<i2")
        codes = codes.reshape(height, width).astype(np.int64)
        off += length
        recon = codes * step if recon is None else recon + codes * step
        out.append(np.clip(recon, 0, 255).astype(np.uint8).tobytes())
    sys.stdout.buffer.write(b"".join(out))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="extstub")
    parser.add_argument("mode", choices=["encode", "decode"])
    parser.add_argument("--width", type=int, required=True)
    parser.add_argument("--height", type=int, required=True)
    parser.add_argument("--frames", type=int, required=True)
    parser.add_argument("--qp", type=int, required=True)
    args = parser.parse_args(argv)
    if args.mode == "encode":
        encode(args.width, args.height, args.frames, args.qp)
    else:
        decode(args.width, args.height, args.frames, args.qp)
    return 0


if __name__ == "__main__":
    sys.exit(main())
