"""Compiled versus numpy LAD kernel on the two problem sizes that matter:
many small sketched solves (d x r) and ambient verification solves (D x r).

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from l1ns import _lad_py

try:
    from l1ns import _lad
except ImportError:
    _lad = None

CASES = [
    ("sketched 33x9", 33, 9, 380),
    ("sketched 70x9", 70, 9, 380),
    ("ambient 2000x9", 2000, 9, 38),
]


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if _lad is None:
        print("compiled kernel not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    print(f"{'case':<16}{'batch':>7}{'numpy us/solve':>16}{'cython us/solve':>17}{'speedup':>9}")
    for name, m, r, k in CASES:
        Q = rng.standard_normal((k, m))
        Bs = np.stack([np.linalg.qr(rng.standard_normal((m, r)))[0] for _ in range(k)])
        py_t, py_out = best_time(lambda: _lad_py.lad_solve_batch(Q, Bs, 1e-9, 200, 1e-12), args.repeat)
        row = f"{name:<16}{k:>7}{py_t / k * 1e6:>16.1f}"
        if _lad is not None:
            c_t, c_out = best_time(lambda: _lad.lad_solve_batch(Q, Bs, 1e-9, 200, 1e-12), args.repeat)
            assert np.allclose(c_out[1], py_out[1], rtol=1e-9)
            row += f"{c_t / k * 1e6:>17.1f}{py_t / c_t:>9.1f}"
        print(row)


if __name__ == "__main__":
    main()
