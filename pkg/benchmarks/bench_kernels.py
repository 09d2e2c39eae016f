"""Compare the compiled and pure-numpy convolution backends.

Run without arguments to benchmark both backends in child processes and
print a side-by-side table with speedups:

    python benchmarks/bench_kernels.py

The backend is frozen at import time from FAIRCAST_BACKEND, so each
measurement runs in its own interpreter.  Shapes mirror the layers of the
default predictor on an 8x8 grid with a 24-hour window.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

# name, x shape, w shape, timing repetitions
CASES = [
    ("3d mid layer", (16, 24, 8, 8), (32, 16, 3, 3, 3), 10),
    ("3d entry", (1, 24, 8, 8), (16, 1, 3, 3, 3), 30),
    ("2d window close", (24, 8, 8), (8, 24, 3, 3), 100),
    ("2d features", (4, 8, 8), (4, 4, 3, 3), 300),
    ("1d series", (4, 24), (4, 4, 3), 1000),
]


def bench_one_backend():
    from faircast import kernels

    kernels.warmup()
    rng = np.random.default_rng(0)
    print(f"backend {kernels.active_backend()}")
    for name, x_shape, w_shape, reps in CASES:
        x = rng.standard_normal(x_shape)
        w = rng.standard_normal(w_shape)
        b = rng.standard_normal(w_shape[0])
        out = kernels.conv_same_forward(x, w, b)
        t0 = time.time()
        for _ in range(reps):
            kernels.conv_same_forward(x, w, b)
        fwd_ms = (time.time() - t0) * 1000.0 / reps
        t0 = time.time()
        for _ in range(reps):
            kernels.conv_same_backward(x, w, out)
        bwd_ms = (time.time() - t0) * 1000.0 / reps
        print(f"case|{name}|{fwd_ms:.4f}|{bwd_ms:.4f}")


def parse_child(stdout):
    backend, rows = None, {}
    for line in stdout.splitlines():
        if line.startswith("backend "):
            backend = line.split(" ", 1)[1].strip()
        elif line.startswith("case|"):
            _, name, fwd, bwd = line.split("|")
            rows[name] = (float(fwd), float(bwd))
    return backend, rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--backend", choices=["numpy", "numba"],
                        help="measure one backend in this process")
    args = parser.parse_args()
    if args.backend:
        os.environ["FAIRCAST_BACKEND"] = args.backend
        bench_one_backend()
        return

    results = {}
    for backend in ("numpy", "numba"):
        env = dict(os.environ, FAIRCAST_BACKEND=backend)
        proc = subprocess.run([sys.executable, __file__, "--backend", backend],
                              capture_output=True, text=True, env=env, check=True)
        actual, rows = parse_child(proc.stdout)
        results[backend] = (actual, rows)

    numpy_actual, numpy_rows = results["numpy"]
    numba_actual, numba_rows = results["numba"]
    if numba_actual != "numba":
        print(f"note: numba backend unavailable, fell back to {numba_actual}")
    header = (f"{'case':<18} {'numpy fwd':>10} {'numba fwd':>10} {'x':>6}   "
              f"{'numpy bwd':>10} {'numba bwd':>10} {'x':>6}")
    print(header)
    print("-" * len(header))
    for name, _x, _w, _reps in CASES:
        nf, nb = numpy_rows[name], numba_rows[name]
        print(f"{name:<18} {nf[0]:>9.3f}ms {nb[0]:>9.3f}ms {nf[0] / nb[0]:>5.1f}x   "
              f"{nf[1]:>9.3f}ms {nb[1]:>9.3f}ms {nf[1] / nb[1]:>5.1f}x")


if __name__ == "__main__":
    main()
