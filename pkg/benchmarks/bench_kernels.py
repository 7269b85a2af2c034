"""Benchmark the compiled CSR kernels against the NumPy fallback.

Run after building the extension in place:

    python benchmarks/bench_kernels.py

Covers the two kernel primitives on a synthetic TF-IDF-shaped workload
plus one full MLP training epoch through each backend (the backend is
chosen at import, so the training comparison runs in subprocesses).
"""

import json
import os
import subprocess
import sys
import time

import numpy as np

from modq import _pykernels

try:
    from modq import _ckernels
except ImportError:
    _ckernels = None


def synthetic_csr(rng, n_rows=4000, n_cols=20000, nnz_per_row=60):
    indptr = np.arange(n_rows + 1, dtype=np.int64) * nnz_per_row
    indices = np.concatenate([
        np.sort(rng.choice(n_cols, size=nnz_per_row, replace=False)) for _ in range(n_rows)
    ]).astype(np.int32)
    data = rng.random(n_rows * nnz_per_row)
    return indptr, indices, data


def timeit(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_kernels():
    rng = np.random.default_rng(0)
    indptr, indices, data = synthetic_csr(rng)
    W = rng.standard_normal((20000, 64))
    G = rng.standard_normal((4000, 64))

    rows = []
    for name, args in (
        ("csr_matmul", (indptr, indices, data, W)),
        ("csr_t_matmul", (indptr, indices, data, G, 20000)),
    ):
        py = timeit(lambda: getattr(_pykernels, name)(*args))
        row = {"kernel": name, "python_s": py}
        if _ckernels is not None:
            cy = timeit(lambda: getattr(_ckernels, name)(*args))
            got = getattr(_ckernels, name)(*args)
            want = getattr(_pykernels, name)(*args)
            assert np.allclose(got, want, rtol=1e-10, atol=1e-12), "backends disagree"
            row |= {"compiled_s": cy, "speedup": py / cy}
        rows.append(row)
    return rows


_TRAIN_SNIPPET = """
import time
import numpy as np
from modq import corpus, classifiers, synthetic, kernels
ds = synthetic.generate_corpus(n=2000, seed=7)
train, _, _ = corpus.split_dataset(ds, (0.8, 0.1, 0.1), seed=0)
vocab = corpus.build_vocabulary(train)
X, y = corpus.feature_matrix(train, vocab)
cfg = classifiers.TrainConfig(epochs=10, seed=0)
start = time.perf_counter()
classifiers.train_mlp(X, y, 4, cfg)
print(kernels.backend(), time.perf_counter() - start)
"""


def bench_training():
    rows = {}
    for env_flag in ("0", "1"):
        out = subprocess.run(
            [sys.executable, "-c", _TRAIN_SNIPPET],
            env=os.environ | {"MODQ_PURE_PYTHON": env_flag},
            capture_output=True, text=True, check=True,
        )
        backend, seconds = out.stdout.split()
        rows[backend] = float(seconds)
    return rows


def main():
    print(f"kernel backends available: python"
          f"{', compiled' if _ckernels is not None else ' (compiled not built)'}")
    kernel_rows = bench_kernels()
    for row in kernel_rows:
        line = f"{row['kernel']:>14}: python {row['python_s'] * 1e3:8.2f} ms"
        if "compiled_s" in row:
            line += (f"   compiled {row['compiled_s'] * 1e3:8.2f} ms"
                     f"   speedup {row['speedup']:5.1f}x")
        print(line)
    train = bench_training()
    print("train_mlp, 10 epochs on the bundled corpus:")
    for backend, seconds in sorted(train.items()):
        print(f"{backend:>14}: {seconds:8.2f} s")
    if len(train) == 2:
        print(f"{'speedup':>14}: {train['python'] / train['compiled']:8.1f}x")
    print(json.dumps({"kernels": kernel_rows, "training": train}))


if __name__ == "__main__":
    main()
