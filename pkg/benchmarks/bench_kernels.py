"""Compare the numba and numpy kernel backends.

Times every layer kernel on the layer shapes of a small training column and
of the first stages of a full-size 3755-class column, then times one whole
forward and training step per backend (each in a fresh interpreter, since the
backend is fixed at import).

    python benchmarks/bench_kernels.py [--repeats 20] [--json out.json]
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from mcdnn import kernels

# (label, input maps, side, output maps, kernel, pool)
LAYERS = [
    ("small conv1", 1, 48, 10, 3, 2),
    ("small conv2", 10, 23, 20, 2, 2),
    ("small conv4", 40, 5, 80, 2, 2),
    ("big conv1", 1, 48, 100, 3, 2),
    ("big conv2", 100, 23, 200, 2, 2),
]
FULL = [("small fc", 320, 100), ("big fc", 1600, 500), ("big out", 500, 3755)]
COLUMN_ARCH = "48x48-10C3-MP2-20C2-MP2-40C2-MP2-80C2-MP2-100N-20N"


def best_ms(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return 1e3 * min(times)


def kernel_table(repeats):
    rng = np.random.default_rng(0)
    rows = []
    for label, cin, side, cout, k, p in LAYERS:
        x = rng.standard_normal((cin, side, side)).astype(np.float32)
        w = rng.standard_normal((cout, cin, k, k)).astype(np.float32)
        b = np.zeros(cout, np.float32)
        o = side - k + 1
        dout = rng.standard_normal((cout, o, o)).astype(np.float32)
        pooled_in = dout[:, :o - o % p, :o - o % p].copy()
        for name, impl in kernels.implementations().items():
            pooled, arg = impl.maxpool_forward(pooled_in, p)
            rows.append((label, name, {
                "conv fwd": best_ms(lambda: impl.conv_forward(x, w, b), repeats),
                "conv bwd": best_ms(lambda: impl.conv_backward(x, w, dout, cin > 1), repeats),
                "pool fwd": best_ms(lambda: impl.maxpool_forward(pooled_in, p), repeats),
                "pool bwd": best_ms(lambda: impl.maxpool_backward(pooled, arg, *pooled_in.shape[1:]),
                                    repeats),
            }))
    for label, n_in, n_out in FULL:
        x = rng.standard_normal(n_in).astype(np.float32)
        w = rng.standard_normal((n_out, n_in)).astype(np.float32)
        b = np.zeros(n_out, np.float32)
        dout = rng.standard_normal(n_out).astype(np.float32)
        for name, impl in kernels.implementations().items():
            rows.append((label, name, {
                "fc fwd": best_ms(lambda: impl.fc_forward(x, w, b), repeats),
                "fc bwd": best_ms(lambda: impl.fc_backward(x, w, dout, True), repeats),
            }))
    return rows


def column_timing(repeats):
    """Forward and training-step ms for the backend selected at import."""
    from mcdnn import nn
    from mcdnn.arch import parse_arch
    col = nn.init_column(parse_arch(COLUMN_ARCH), 0)
    x = np.random.default_rng(1).uniform(-1, 1, (1, 48, 48)).astype(np.float32)
    return {"backend": kernels.BACKEND,
            "forward": best_ms(lambda: nn.forward_column(col, x), repeats),
            "train step": best_ms(lambda: nn.backward_column(col, x, 3), repeats)}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--json", help="also write results here")
    ap.add_argument("--column-only", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.column_only:
        print(json.dumps(column_timing(args.repeats)))
        return

    rows = kernel_table(args.repeats)
    print(f"{'layer':<12} {'backend':<7}  timings in ms (best of {args.repeats})")
    for label, name, t in rows:
        print(f"{label:<12} {name:<7}  " + "  ".join(f"{k}={v:.4f}" for k, v in t.items()))

    columns = []
    for backend in kernels.implementations():
        env = dict(os.environ, MCDNN_BACKEND=backend)
        out = subprocess.run([sys.executable, __file__, "--column-only", "--repeats",
                              str(args.repeats)], env=env, capture_output=True, text=True,
                             check=True)
        columns.append(json.loads(out.stdout))
    print(f"\nwhole column {COLUMN_ARCH}")
    for c in columns:
        print(f"  {c['backend']:<7} forward={c['forward']:.3f} ms  train step={c['train step']:.3f} ms")

    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"kernels": [{"layer": l, "backend": n, "ms": t} for l, n, t in rows],
                       "columns": columns}, fh, indent=2)


if __name__ == "__main__":
    main()
