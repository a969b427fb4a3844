"""Compare the compiled kernels with the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--batch 64]

Each kernel is timed on the shapes it sees during training (32x32 images,
TI-CNN sized convolutions, 1024-point clouds). The best of ``--repeat`` runs
is reported per backend together with the speedup and a parity check.
"""

import argparse
import math
import timeit

import numpy as np

from scnet import kernels


def rotation_maps(size, phi):
    c = (size - 1) / 2.0
    rr, cc = np.mgrid[:size, :size].astype(np.float64)
    y, x = rr - c, cc - c
    cos, sin = math.cos(phi), math.sin(phi)
    return c + cos * y - sin * x, c + sin * y + cos * x


def cases(batch, rng):
    images = rng.random((batch, 32, 32, 1)).astype(np.float32)
    rows, cols = rotation_maps(32, 0.7)
    xy = rng.uniform(-1, 1, (batch, 1024, 2))
    x = rng.random((batch, 16, 35, 35)).astype(np.float32)
    patches = np.ascontiguousarray(kernels.backends()["python"].im2col(x, 4, 4, 1))
    return {
        "warp_bilinear": lambda m: m.warp_bilinear(images, rows, cols),
        "rasterize": lambda m: m.rasterize(xy, 32),
        "im2col": lambda m: m.im2col(x, 4, 4, 1),
        "col2im": lambda m: m.col2im(patches, 16, 35, 35, 4, 4, 1),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    found = kernels.backends()
    if "cython" not in found:
        print("compiled extension not built; run 'python3 setup.py build_ext --inplace'")
    names = sorted(found)
    print(f"{'kernel':<14}" + "".join(f"{n + ' ms':>12}" for n in names) + f"{'speedup':>10}{'max diff':>12}")
    for kernel, call in cases(args.batch, np.random.default_rng(args.seed)).items():
        best = {}
        outs = {}
        for name in names:
            mod = found[name]
            outs[name] = call(mod)
            best[name] = min(timeit.repeat(lambda: call(mod), number=1, repeat=args.repeat)) * 1e3
        speed = best["python"] / best["cython"] if "cython" in best else float("nan")
        diff = float(np.abs(outs["python"] - outs["cython"]).max()) if "cython" in outs else float("nan")
        print(f"{kernel:<14}" + "".join(f"{best[n]:>12.2f}" for n in names) + f"{speed:>9.1f}x{diff:>12.2e}")


if __name__ == "__main__":
    main()
