#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Per-kernel timings run both implementations in-process on representative
shapes; the optional end-to-end mode trains the bundled toy writer corpus a
few epochs in a subprocess per backend (the backend is frozen at import, so
a fresh interpreter is required to switch).

Usage:
    python benchmarks/bench_kernels.py [--repeat 2000] [--end-to-end]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from kgwriter import kernels  # noqa: E402

SHAPES = [(64,), (256,), (32, 64), (128, 256)]


def time_call(fn, args, repeat):
    fn(*args)  # warm (numba compiles here)
    best = float("inf")
    for _ in range(5):
        start = time.perf_counter()
        for _ in range(repeat):
            fn(*args)
        best = min(best, (time.perf_counter() - start) / repeat)
    return best


def kernel_cases(rng, shape):
    x = rng.normal(size=shape)
    g = rng.normal(size=shape)
    y = 1.0 / (1.0 + np.exp(-x))
    rows = x.reshape(1, -1) if len(shape) == 1 else x
    rg = g.reshape(1, -1) if len(shape) == 1 else g
    sm = np.exp(rows - rows.max(axis=1, keepdims=True))
    sm /= sm.sum(axis=1, keepdims=True)
    p = rng.normal(size=shape)
    m = np.zeros(shape)
    v = np.zeros(shape)
    return [
        ("sigmoid", (x,)),
        ("sigmoid_grad", (g, y)),
        ("tanh", (x,)),
        ("tanh_grad", (g, np.tanh(x))),
        ("leaky_relu", (x, 0.2)),
        ("leaky_relu_grad", (g, x, 0.2)),
        ("relu", (x,)),
        ("relu_grad", (g, x)),
        ("softmax_rows", (rows,)),
        ("softmax_rows_grad", (rg, sm)),
        ("minimum_grad", (g, x, np.roll(x, 1))),
        ("adam_update", (p, g, m, v, 0.001, 0.9, 0.999, 1e-8, 1)),
    ]


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    np_impls = kernels.numpy_impls()
    try:
        nb_impls = kernels.numba_impls()
    except ImportError:
        print("numba not importable; nothing to compare")
        return
    print(f"{'kernel':<18} {'shape':<12} {'numpy us':>10} {'numba us':>10} {'speedup':>8}")
    for shape in SHAPES:
        for name, args in kernel_cases(rng, shape):
            t_np = time_call(np_impls[name], [np.array(a, copy=True) if isinstance(a, np.ndarray) else a
                                              for a in args], repeat)
            t_nb = time_call(nb_impls[name], [np.array(a, copy=True) if isinstance(a, np.ndarray) else a
                                              for a in args], repeat)
            print(f"{name:<18} {str(shape):<12} {t_np * 1e6:>10.2f} {t_nb * 1e6:>10.2f} "
                  f"{t_np / t_nb:>7.2f}x")


END_TO_END_SNIPPET = r"""
import os, time
from kgwriter import kernels, writer as w
from kgwriter.writer import TrainPair
records = w.read_corpus(os.path.join({toy!r}, "title_abstract.jsonl"))
vocab = w.build_vocabulary([r["src"] for r in records] + [r["tgt"] for r in records], oov_floor=1)
dims = w.WriterDims(vocab_size=len(vocab), emb_dim=16, dec_hidden=32, attn_hidden=16,
                    init_hops=3, step_hops=3, n_memory=0, max_len=30)
params = w.init_writer_params(dims, (), seed=7)
pairs = [TrainPair(r["src"], r["tgt"], []) for r in records]
w.train_writer(pairs, params, vocab, epochs=1, seed=7)   # warm
start = time.perf_counter()
w.train_writer(pairs, params, vocab, epochs={epochs}, seed=7)
dt = time.perf_counter() - start
print(f"backend={{kernels.BACKEND}}  {{dt:.2f}}s for {epochs} epochs "
      f"({{dt / {epochs} * 1000:.0f}} ms/epoch)")
"""


def bench_end_to_end(epochs):
    toy = os.path.join(os.path.dirname(__file__), "..", "data", "toy")
    snippet = END_TO_END_SNIPPET.format(toy=os.path.abspath(toy), epochs=epochs)
    for backend in ("numpy", "numba"):
        env = dict(os.environ, KGWRITER_BACKEND=backend)
        env["PYTHONPATH"] = os.pathsep.join(
            [os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src")),
             env.get("PYTHONPATH", "")])
        out = subprocess.run([sys.executable, "-c", snippet], env=env,
                             capture_output=True, text=True)
        print(out.stdout.strip() or out.stderr.strip())


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=2000)
    parser.add_argument("--end-to-end", action="store_true",
                        help="also train the toy corpus under each backend")
    parser.add_argument("--epochs", type=int, default=10)
    args = parser.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    bench_kernels(args.repeat)
    if args.end_to_end:
        print()
        bench_end_to_end(args.epochs)


if __name__ == "__main__":
    main()
