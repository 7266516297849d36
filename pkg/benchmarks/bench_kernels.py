#!/usr/bin/env python3
"""Numba kernels vs their pure-numpy twins.

Times every hot kernel in spikerpe._kernels on both paths, checks the two
agree, and prints a CSV (plus an aligned table on stderr).

Usage:
    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --rows 1024 4096 --repeats 20
    python3 benchmarks/bench_kernels.py --json bench.json
"""

import argparse
import csv
import json
import sys
import time

import numpy as np

from spikerpe import _kernels as K


def best_of(fn, repeats):
    fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rows, width, length, dtype, rng):
    t_steps = 4
    cur = rng.normal(0.8, 0.6, (t_steps, rows * width // t_steps)).astype(dtype)
    spikes, h = K.lif_forward_numpy(cur, 2.0, 1.0, 0.0)
    g = rng.normal(size=cur.shape).astype(dtype)
    x = rng.normal(size=(rows, width)).astype(dtype)
    gamma = np.ones(width, dtype=dtype)
    beta = np.zeros(width, dtype=dtype)
    _, xhat, _, _, inv_std = K.bn_forward_numpy(x, gamma, beta, 1e-5)
    q = rng.integers(0, 2, (rows // length, length, 32), dtype=np.int8)
    k = rng.integers(0, 2, (rows // length, length, 32), dtype=np.int8)
    codes = np.arange(length, dtype=np.int64)
    codes ^= codes >> 1
    return {
        "lif_forward": ((cur, 2.0, 1.0, 0.0), K.lif_forward_numpy, "lif_forward_numba"),
        "lif_backward": ((g, h, spikes, 2.0, 1.0, 0.0, 2.0), K.lif_backward_numpy, "lif_backward_numba"),
        "bn_forward": ((x, gamma, beta, 1e-5), K.bn_forward_numpy, "bn_forward_numba"),
        "bn_backward": ((g.reshape(x.shape), xhat, gamma, inv_std, True), K.bn_backward_numpy, "bn_backward_numba"),
        "xnor_counts": ((q, k), K.xnor_counts_numpy, "xnor_counts_numba"),
        "dot_counts": ((q, k), K.dot_counts_numpy, "dot_counts_numba"),
        "hamming_table": ((codes,), K.hamming_table_numpy, "hamming_table_numba"),
    }


def _cast(args, dtype):
    out = []
    for a in args:
        if isinstance(a, float):
            out.append(np.dtype(dtype).type(a))
        else:
            out.append(a)
    return tuple(out)


def _close(a, b, dtype):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    tol = 1e-4 if dtype == np.float32 else 1e-10
    return all(np.allclose(x, y, rtol=tol, atol=tol) for x, y in zip(a, b))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, nargs="+", default=[1024, 4096])
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--length", type=int, default=16)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--json", help="also write results here")
    args = p.parse_args(argv)
    if not K.NUMBA_AVAILABLE:
        print("numba is not installed; nothing to compare", file=sys.stderr)
        return 1
    dtype = np.dtype(args.dtype)
    rng = np.random.default_rng(0)
    results = []
    for rows in args.rows:
        for name, (kargs, np_fn, nb_name) in cases(rows, args.width, args.length, dtype, rng).items():
            nb_fn = getattr(K, nb_name)
            nb_args = _cast(kargs, dtype)
            agree = _close(np_fn(*kargs), nb_fn(*nb_args), dtype)
            t_np = best_of(lambda: np_fn(*kargs), args.repeats)
            t_nb = best_of(lambda: nb_fn(*nb_args), args.repeats)
            results.append(
                {
                    "kernel": name,
                    "rows": rows,
                    "numpy_s": t_np,
                    "numba_s": t_nb,
                    "speedup": t_np / t_nb,
                    "agree": bool(agree),
                }
            )
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["kernel", "rows", "numpy_s", "numba_s", "speedup", "agree"])
    for r in results:
        w.writerow([r["kernel"], r["rows"], f"{r['numpy_s']:.3e}", f"{r['numba_s']:.3e}", f"{r['speedup']:.2f}", r["agree"]])
    for r in results:
        print(
            f"{r['kernel']:<14} {r['rows']:>6}  numpy {r['numpy_s'] * 1e3:8.3f} ms"
            f"  numba {r['numba_s'] * 1e3:8.3f} ms  x{r['speedup']:6.2f}",
            file=sys.stderr,
        )
    if args.json:
        with open(args.json, "w") as f:
            json.dump({"dtype": args.dtype, "results": results}, f, indent=2)
    return 0 if all(r["agree"] for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
