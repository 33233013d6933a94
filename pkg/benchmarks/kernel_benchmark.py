"""Compare the numpy and numba kernel backends on training-shaped inputs.

Run as a script:

    python3 benchmarks/kernel_benchmark.py [--repeats 200]

Matrix multiplies are BLAS either way and are not measured here; the two
backends differ only in the elementwise and row-reduction kernels, so those
are what gets timed: layernorm, row softmax, gelu, and silu, forward and
backward, on the shapes an EDT-nano training step actually produces.
"""

import argparse
import time

import numpy as np

from edt.kernels import numpy_backend

try:
    from edt.kernels import numba_backend
except ImportError:
    numba_backend = None

# (rows, cols) pairs seen by an EDT-nano step: token grids at each stage
# width, attention score rows, and the wide FFN activations.
SHAPES = {
    "layernorm": [(8 * 64, 24), (8 * 16, 32), (8 * 4, 40)],
    "softmax": [(8 * 2 * 64, 64), (8 * 4 * 16, 16), (8 * 4 * 4, 4)],
    "gelu": [(8 * 64, 96), (8 * 16, 128), (8 * 4, 160)],
    "silu": [(8 * 64, 24), (8, 256)],
}


def _timeit(fn, args, repeats):
    fn(*args)  # warm-up (and numba compilation)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_backend(backend, repeats):
    rng = np.random.default_rng(0)
    rows = {}
    for rows_cols in SHAPES["layernorm"]:
        x = rng.normal(size=rows_cols).astype(np.float32)
        y, invstd = backend.layernorm_fwd(x, 1e-6)
        dy = rng.normal(size=rows_cols).astype(np.float32)
        rows[f"layernorm fwd {rows_cols}"] = _timeit(backend.layernorm_fwd, (x, 1e-6), repeats)
        rows[f"layernorm bwd {rows_cols}"] = _timeit(backend.layernorm_bwd, (dy, y, invstd), repeats)
    for rows_cols in SHAPES["softmax"]:
        x = rng.normal(size=rows_cols).astype(np.float32)
        y = backend.softmax_fwd(x)
        dy = rng.normal(size=rows_cols).astype(np.float32)
        rows[f"softmax fwd {rows_cols}"] = _timeit(backend.softmax_fwd, (x,), repeats)
        rows[f"softmax bwd {rows_cols}"] = _timeit(backend.softmax_bwd, (dy, y), repeats)
    # the elementwise kernels receive flattened views, as the tensor ops call them
    for rows_cols in SHAPES["gelu"]:
        x = rng.normal(size=rows_cols).astype(np.float32).reshape(-1)
        dy = rng.normal(size=rows_cols).astype(np.float32).reshape(-1)
        rows[f"gelu fwd {rows_cols}"] = _timeit(backend.gelu_fwd, (x,), repeats)
        rows[f"gelu bwd {rows_cols}"] = _timeit(backend.gelu_bwd, (dy, x), repeats)
    for rows_cols in SHAPES["silu"]:
        x = rng.normal(size=rows_cols).astype(np.float32).reshape(-1)
        dy = rng.normal(size=rows_cols).astype(np.float32).reshape(-1)
        rows[f"silu fwd {rows_cols}"] = _timeit(backend.silu_fwd, (x,), repeats)
        rows[f"silu bwd {rows_cols}"] = _timeit(backend.silu_bwd, (dy, x), repeats)
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    numpy_rows = bench_backend(numpy_backend, args.repeats)
    numba_rows = bench_backend(numba_backend, args.repeats) if numba_backend else {}

    name_w = max(len(k) for k in numpy_rows)
    header = f"{'kernel'.ljust(name_w)}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, t_np in numpy_rows.items():
        if numba_rows:
            t_nb = numba_rows[name]
            ratio = t_np / t_nb if t_nb > 0 else float("inf")
            print(f"{name.ljust(name_w)}  {t_np * 1e6:>8.1f}us  {t_nb * 1e6:>8.1f}us  {ratio:>7.2f}x")
        else:
            print(f"{name.ljust(name_w)}  {t_np * 1e6:>8.1f}us  {'n/a':>10}  {'':>8}")
    if not numba_rows:
        print("\nnumba is not installed; only the numpy backend was measured.")


if __name__ == "__main__":
    main()
