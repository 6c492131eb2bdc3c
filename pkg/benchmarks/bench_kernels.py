"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Shapes match what the desk-scale network sees in one training step
(batch 8, 64x64 crops, 16-64 channels).
"""
import argparse
import json
import platform
import timeit

import numpy as np

from mdir import kernels
from mdir.kernels import _reference

CASES = [
    # name, (N, C, H, W), k, stride
    ("im2col 16ch 64px k3", (8, 16, 64, 64), 3, 1),
    ("im2col 32ch 32px k3 s2", (8, 32, 32, 32), 3, 2),
    ("im2col 64ch 16px k3", (8, 64, 16, 16), 3, 1),
    ("col2im 16ch 64px k3", (8, 16, 64, 64), 3, 1),
    ("col2im 64ch 16px k3", (8, 64, 16, 16), 3, 1),
    ("dynfilter 16ch 64px k3", (8, 16, 64, 64), 3, None),
    ("dynfilter 16ch 64px k7", (8, 16, 64, 64), 7, None),
    ("dynfilter bwd 32ch 32px k5", (8, 32, 32, 32), 5, None),
]


def make_call(name, shape, k, stride):
    rng = np.random.default_rng(0)
    x = rng.random(shape, dtype=np.float32)
    N, C, H, W = shape
    if name.startswith("im2col"):
        return lambda: kernels.im2col(x, k, stride, k // 2)
    if name.startswith("col2im"):
        rows = N * kernels.out_size(H, k, stride, k // 2) * kernels.out_size(W, k, stride, k // 2)
        cols = rng.random((rows, k * k * C), dtype=np.float32)
        return lambda: kernels.col2im(cols, shape, k, stride, k // 2)
    w = rng.uniform(-1, 1, (N, C, k * k)).astype(np.float32)
    if "bwd" in name:
        g = rng.random(shape, dtype=np.float32)
        return lambda: kernels.dynamic_filter_backward(x, w, g, k)
    return lambda: kernels.dynamic_filter(x, w, k)


def bench(repeat):
    rows = []
    backends = ["numpy"] + (["cython"] if kernels._compiled is not None else [])
    old = kernels.BACKEND
    try:
        for name, shape, k, stride in CASES:
            row = {"case": name}
            for b in backends:
                kernels.use_backend(b)
                fn = make_call(name, shape, k, stride)
                fn()
                row[b] = min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3
            rows.append(row)
    finally:
        kernels.use_backend(old)
    return backends, rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json")
    args = ap.parse_args()
    backends, rows = bench(args.repeat)
    print(f"python {platform.python_version()}, numpy {np.__version__}; best of {args.repeat}, ms")
    print(f"{'case':30s}" + "".join(f"{b:>10s}" for b in backends) + ("   speedup" if len(backends) > 1 else ""))
    for r in rows:
        line = f"{r['case']:30s}" + "".join(f"{r[b]:10.2f}" for b in backends)
        if len(backends) > 1:
            line += f"{r['numpy'] / r['cython']:9.2f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=2)


if __name__ == "__main__":
    main()
