#!/usr/bin/env python3
"""Convert torchvision ResNet-34 weights to a `.qvw` bundle, and compare the
Rust reference backbone against torchvision on the same frames.

    python tools/torchvision_resnet34.py convert --out resnet34.qvw [--random --seed 0]
    python tools/torchvision_resnet34.py compare --weights resnet34.qvw \
        --frame-cache data/frame_cache/v1.frames.bin --features feats/v1.feat --frames 3
"""

import argparse
import struct
import sys

import numpy as np
import torch
import torchvision

MAGIC = b"QVSW"
VERSION = 1


def write_qvw(path, tensors):
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<II", VERSION, len(tensors)))
        for name in sorted(tensors):
            t = np.ascontiguousarray(tensors[name], dtype="<f8")
            raw = name.encode()
            f.write(struct.pack("<I", len(raw)) + raw)
            f.write(struct.pack("<I", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
            f.write(t.tobytes())


def read_qvw(path):
    data = open(path, "rb").read()
    assert data[:4] == MAGIC, "bad magic"
    version, count = struct.unpack_from("<II", data, 4)
    assert version == VERSION
    pos, out = 12, {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, pos)
        name = data[pos + 4 : pos + 4 + n].decode()
        pos += 4 + n
        (ndim,) = struct.unpack_from("<I", data, pos)
        dims = struct.unpack_from(f"<{ndim}I", data, pos + 4)
        pos += 4 + 4 * ndim
        size = int(np.prod(dims)) if ndim else 1
        out[name] = np.frombuffer(data, "<f8", size, pos).reshape(dims)
        pos += 8 * size
    return out


def read_f32_tensor(path, ndim):
    data = open(path, "rb").read()
    dims = struct.unpack_from(f"<{ndim}I", data, 0)
    return np.frombuffer(data, "<f4", offset=4 * ndim).reshape(dims)


def convert(args):
    if args.random:
        torch.manual_seed(args.seed)
        model = torchvision.models.resnet34(weights=None)
    else:
        model = torchvision.models.resnet34(weights="IMAGENET1K_V1")
    tensors = {
        k: v.double().numpy()
        for k, v in model.state_dict().items()
        if not k.startswith("fc.") and not k.endswith("num_batches_tracked")
    }
    write_qvw(args.out, tensors)
    print(f"{len(tensors)} tensors written to {args.out}")


def compare(args):
    model = torchvision.models.resnet34(weights=None)
    model.fc = torch.nn.Identity()
    state = {k: torch.from_numpy(v.copy()) for k, v in read_qvw(args.weights).items()}
    missing, unexpected = model.load_state_dict(state, strict=False)
    missing = [k for k in missing if not k.endswith("num_batches_tracked")]
    assert not missing and not unexpected, (missing, unexpected)
    model = model.double().eval()

    frames = read_f32_tensor(args.frame_cache, 4)[: args.frames].astype(np.float64)
    with torch.no_grad():
        ours = model(torch.from_numpy(frames)).numpy()
    theirs = read_f32_tensor(args.features, 2)[: args.frames].astype(np.float64)
    err = np.abs(ours - theirs).max() / max(np.abs(ours).max(), 1e-12)
    print(f"max relative difference over {args.frames} frames: {err:.3e}")
    return 0 if err <= args.tol else 1


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)
    c = sub.add_parser("convert")
    c.add_argument("--out", required=True)
    c.add_argument("--random", action="store_true", help="random init instead of ImageNet")
    c.add_argument("--seed", type=int, default=0)
    k = sub.add_parser("compare")
    k.add_argument("--weights", required=True)
    k.add_argument("--frame-cache", required=True)
    k.add_argument("--features", required=True)
    k.add_argument("--frames", type=int, default=3)
    # Features are stored as f32.
    k.add_argument("--tol", type=float, default=1e-5)
    args = p.parse_args()
    return convert(args) if args.cmd == "convert" else compare(args)


if __name__ == "__main__":
    sys.exit(main())
